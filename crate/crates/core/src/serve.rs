//! Real-time mode: the kernel advances one tick per wall interval while
//! HTTP exposition endpoints and the RAN WebSocket API serve snapshots.
//!
//! The kernel loop is the only mutator. Handlers read the latest published
//! snapshot and push control actions into a channel that the loop drains
//! into kernel events at the current tick.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::{mpsc, Arc, RwLock};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;

use crate::cluster::NodeName;
use crate::kernel::SimTime;
use crate::ran::{
    config_set_response, malformed_response, parse_api_request, stats_response,
    unknown_response, ApiRequest, UeStats,
};
use crate::scenario::model::{Action, Scenario};
use crate::scenario::runner::{RunError, RunOutcome, Simulation};
use crate::testbed::SimEvent;

pub const SIM_TIME_HEADER: &str = "x-sim-time-seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct ServePorts {
    /// master, core, edge, monitoring
    pub node_exporters: [u16; 4],
    pub sampler: u16,
    pub ran_api: u16,
}

impl Default for ServePorts {
    fn default() -> Self {
        ServePorts {
            node_exporters: [9101, 9102, 9103, 9104],
            sampler: 9110,
            ran_api: 9999,
        }
    }
}

impl ServePorts {
    /// All zero: every endpoint gets an ephemeral port.
    pub fn ephemeral() -> Self {
        ServePorts {
            node_exporters: [0; 4],
            sampler: 0,
            ran_api: 0,
        }
    }
}

/// Where each endpoint ended up listening.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundAddrs {
    /// Keyed by scrape target id, e.g. `node-core` or `sampler`.
    pub exporters: BTreeMap<String, SocketAddr>,
    pub ran_api: SocketAddr,
}

pub type ReadyHook = Box<dyn FnOnce(&BoundAddrs) + Send>;

pub struct ServeOptions {
    pub bind: IpAddr,
    pub ports: ServePorts,
    pub tick_wall: Duration,
    pub on_ready: Option<ReadyHook>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            ports: ServePorts::default(),
            tick_wall: Duration::from_millis(100),
            on_ready: None,
        }
    }
}

/// What the endpoints see: the latest scrape of every exporter and the
/// RAN stats of the last completed tick.
#[derive(Debug, Clone, Default)]
struct Snapshot {
    now: SimTime,
    scraped_at: Option<SimTime>,
    expositions: BTreeMap<String, Option<String>>,
    ran_stats: Vec<UeStats>,
}

#[derive(Clone)]
struct Shared {
    snapshot: Arc<RwLock<Snapshot>>,
    control: mpsc::Sender<Action>,
}

#[derive(Clone)]
struct ExporterState {
    shared: Shared,
    target: String,
}

async fn metrics(State(st): State<ExporterState>) -> Response {
    let snap = st.shared.snapshot.read().expect("snapshot lock").clone();
    match (snap.scraped_at, snap.expositions.get(&st.target)) {
        (Some(at), Some(Some(text))) => (
            [
                (header::CONTENT_TYPE, "text/plain; version=0.0.4".to_string()),
                (
                    HeaderName::from_static(SIM_TIME_HEADER),
                    at.as_secs_f64().to_string(),
                ),
            ],
            text.clone(),
        )
            .into_response(),
        _ => (StatusCode::SERVICE_UNAVAILABLE, "target down\n").into_response(),
    }
}

fn answer(shared: &Shared, request: &str) -> String {
    match parse_api_request(request) {
        ApiRequest::Stats { message_id } => {
            let snap = shared.snapshot.read().expect("snapshot lock");
            stats_response(&message_id, snap.now, &snap.ran_stats)
        }
        ApiRequest::ConfigSet {
            message_id,
            rx_gain_offset_db,
        } => {
            let _ = shared.control.send(Action::SetRxGainOffset {
                offset_db: rx_gain_offset_db,
            });
            config_set_response(&message_id)
        }
        ApiRequest::Unknown { message_id } => unknown_response(&message_id),
        ApiRequest::Malformed { reason } => malformed_response(&reason),
    }
}

async fn ran_socket(mut socket: WebSocket, shared: Shared) {
    while let Some(Ok(msg)) = socket.recv().await {
        let reply = match msg {
            Message::Text(text) => answer(&shared, text.as_str()),
            Message::Binary(bytes) => match std::str::from_utf8(&bytes) {
                Ok(text) => answer(&shared, text),
                Err(_) => malformed_response("binary frame is not UTF-8"),
            },
            Message::Close(_) => break,
            _ => continue,
        };
        if socket.send(Message::Text(reply.into())).await.is_err() {
            break;
        }
    }
}

async fn ran_api(ws: WebSocketUpgrade, State(shared): State<Shared>) -> Response {
    ws.on_upgrade(move |socket| ran_socket(socket, shared))
}

fn publish(sim: &Simulation, snapshot: &RwLock<Snapshot>) {
    let monitoring = &sim.testbed.monitoring;
    let mut snap = snapshot.write().expect("snapshot lock");
    snap.now = sim.now();
    snap.ran_stats = sim.testbed.gnb.ran_stats();
    if monitoring.last_scrape_at() != snap.scraped_at {
        snap.scraped_at = monitoring.last_scrape_at();
        snap.expositions = monitoring.last_exposition().clone();
    }
}

/// Runs `scenario` paced against the wall clock, serving the exposition
/// endpoints and the RAN API until the scenario ends.
pub fn run_serve(
    scenario: &Scenario,
    seed: u64,
    overrides: &BTreeMap<String, f64>,
    options: ServeOptions,
) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let mut sim = Simulation::new(scenario, seed, overrides)?;
    let (tx, rx) = mpsc::channel();
    let shared = Shared {
        snapshot: Arc::new(RwLock::new(Snapshot::default())),
        control: tx,
    };

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_io()
        .build()?;
    let serve_err = |e: std::io::Error| RunError::Serve(format!("cannot bind endpoint: {e}"));

    let mut bound = BoundAddrs {
        exporters: BTreeMap::new(),
        ran_api: SocketAddr::new(options.bind, 0),
    };
    let mut exporter_ports: Vec<(String, u16)> = NodeName::ALL
        .iter()
        .zip(options.ports.node_exporters)
        .map(|(n, p)| (format!("node-{}", n.as_str()), p))
        .collect();
    exporter_ports.push(("sampler".into(), options.ports.sampler));
    for (target, port) in exporter_ports {
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind((options.bind, port)))
            .map_err(serve_err)?;
        bound
            .exporters
            .insert(target.clone(), listener.local_addr().map_err(serve_err)?);
        let app = Router::new()
            .route("/metrics", get(metrics))
            .with_state(ExporterState {
                shared: shared.clone(),
                target,
            });
        runtime.spawn(async move { axum::serve(listener, app).await });
    }
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind((options.bind, options.ports.ran_api)))
        .map_err(serve_err)?;
    bound.ran_api = listener.local_addr().map_err(serve_err)?;
    let app = Router::new()
        .route("/", get(ran_api))
        .with_state(shared.clone());
    runtime.spawn(async move { axum::serve(listener, app).await });

    publish(&sim, &shared.snapshot);
    if let Some(ready) = options.on_ready {
        ready(&bound);
    }

    let loop_start = Instant::now();
    let mut ticks: u32 = 0;
    let result = (|| {
        while !sim.is_done() {
            while let Ok(action) = rx.try_recv() {
                let now = sim.now();
                sim.kernel.schedule(now, SimEvent::Control(action))?;
            }
            let next = sim.now().plus_ticks(1);
            sim.advance_to(next)?;
            publish(&sim, &shared.snapshot);
            ticks += 1;
            let deadline = loop_start + options.tick_wall * ticks;
            if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        Ok::<(), RunError>(())
    })();
    runtime.shutdown_background();
    result?;
    Ok(sim.finish(started.elapsed()))
}
