//! Serve mode driven over real sockets: the RAN WebSocket API and the
//! exposition endpoints.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use mecsim::ran::parse_stats_response;
use mecsim::scenario::model::parse_scenario;
use mecsim::serve::{run_serve, BoundAddrs, ServeOptions, ServePorts, SIM_TIME_HEADER};
use tokio_tungstenite::tungstenite::Message;

const ATTACH_ONE_UE: &str = r#"{
  "name": "serve-probe",
  "duration_s": 12,
  "events": [
    {"at_s": 0, "action": "install_chart", "args": {"chart": "open5gs-core"}},
    {"at_s": 0, "action": "install_chart", "args": {"chart": "monitoring"}},
    {"at_s": 0, "action": "gnb_connect", "args": {}},
    {"at_s": 0, "action": "ue_attach", "args": {"ue": 1}}
  ]
}"#;

fn start(tick_ms: u64) -> (BoundAddrs, std::thread::JoinHandle<mecsim::scenario::runner::RunOutcome>) {
    let scenario = parse_scenario(ATTACH_ONE_UE).unwrap();
    let (tx, rx) = mpsc::channel();
    let options = ServeOptions {
        ports: ServePorts::ephemeral(),
        tick_wall: Duration::from_millis(tick_ms),
        on_ready: Some(Box::new(move |addrs| tx.send(addrs.clone()).unwrap())),
        ..ServeOptions::default()
    };
    let handle =
        std::thread::spawn(move || run_serve(&scenario, 1, &BTreeMap::new(), options).unwrap());
    let addrs = rx.recv_timeout(Duration::from_secs(10)).unwrap();
    (addrs, handle)
}

async fn exchange(
    ws: &mut tokio_tungstenite::WebSocketStream<
        tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>,
    >,
    request: &str,
) -> serde_json::Value {
    ws.send(Message::text(request)).await.unwrap();
    let reply = ws.next().await.unwrap().unwrap().into_text().unwrap();
    serde_json::from_str(&reply).unwrap()
}

#[test]
fn config_set_over_the_socket_lowers_the_snr() {
    let (addrs, handle) = start(5);
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async {
        let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/", addrs.ran_api))
            .await
            .unwrap();

        let bad = exchange(&mut ws, "not json").await;
        assert_eq!(bad["error"], "bad_request");
        let unknown = exchange(&mut ws, r#"{"message":"reboot","message_id":"u1"}"#).await;
        assert_eq!(unknown["error"], "unknown_message");
        assert_eq!(unknown["message_id"], "u1");

        let ack = exchange(
            &mut ws,
            r#"{"message":"config_set","message_id":"c1","rx_gain_offset_db":-6}"#,
        )
        .await;
        assert_eq!(ack["ok"], true);

        let mut seen = None;
        for _ in 0..400 {
            let reply = exchange(&mut ws, r#"{"message":"stats","message_id":"s"}"#).await;
            let (_, ues) = parse_stats_response(&reply.to_string()).unwrap();
            if let Some(ue) = ues.iter().find(|u| u.ue_id == 1 && u.snr == 14.0) {
                seen = Some(ue.clone());
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        let ue = seen.expect("the offset never reached the link");
        assert_eq!(ue.cqi, 10);
    });
    let outcome = handle.join().unwrap();
    let snr = outcome
        .dump
        .series
        .iter()
        .find(|s| s.name == "ran_ue_snr_db")
        .unwrap();
    assert_eq!(snr.points.last().unwrap().1, 14.0);
    assert!(outcome.report.errors.is_empty());
}

#[test]
fn exporters_answer_with_text_and_a_time_header() {
    let (addrs, handle) = start(20);
    let client = reqwest::blocking::Client::new();
    let addr = addrs.exporters["node-core"];
    let mut body = None;
    for _ in 0..200 {
        let resp = client.get(format!("http://{addr}/metrics")).send().unwrap();
        if resp.status().is_success() {
            assert!(resp.headers().contains_key(SIM_TIME_HEADER));
            body = Some(resp.text().unwrap());
            break;
        }
        assert_eq!(resp.status().as_u16(), 503);
        std::thread::sleep(Duration::from_millis(10));
    }
    let body = body.expect("node-core never served a scrape");
    assert!(body.contains("# TYPE node_network_transmit_bytes_total counter"));
    let missing = client
        .get(format!("http://{addr}/nothing"))
        .send()
        .unwrap();
    assert_eq!(missing.status().as_u16(), 404);
    handle.join().unwrap();
}
