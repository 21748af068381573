//! Runs a short scenario in real time with the exposition endpoints and the
//! RAN WebSocket API listening, and scrapes one endpoint while it runs.
//!
//!     cargo run --example serve_mode
//!
//! Ports are ephemeral; the bound addresses are printed at start-up.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;
use std::time::Duration;

use mecsim::scenario::model::parse_scenario;
use mecsim::serve::{run_serve, ServeOptions, ServePorts};

const SCENARIO: &str = r#"
name: serve-demo
duration_s: 8
events:
  - {at_s: 0, action: install_chart, args: {chart: open5gs-core}}
  - {at_s: 0, action: install_chart, args: {chart: monitoring}}
  - {at_s: 0, action: gnb_connect}
  - {at_s: 0, action: ue_attach, args: {ue: 1}}
  - {at_s: 1, action: start_flow, args: {flow: dl, ue: 1, direction: downlink, rate_mbps: 50, server: core}}
"#;

fn http_get(addr: std::net::SocketAddr, path: &str) -> std::io::Result<String> {
    let mut stream = TcpStream::connect(addr)?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n")?;
    let mut text = String::new();
    stream.read_to_string(&mut text)?;
    Ok(text)
}

fn main() {
    let scenario = parse_scenario(SCENARIO).expect("scenario is valid");
    let (tx, rx) = mpsc::channel();
    let options = ServeOptions {
        ports: ServePorts::ephemeral(),
        tick_wall: Duration::from_millis(50),
        on_ready: Some(Box::new(move |addrs| {
            let _ = tx.send(addrs.clone());
        })),
        ..ServeOptions::default()
    };
    let sim = std::thread::spawn(move || run_serve(&scenario, 7, &BTreeMap::new(), options));
    let addrs = rx.recv().expect("server starts");
    for (target, addr) in &addrs.exporters {
        println!("{target:<16} http://{addr}/metrics");
    }
    println!("{:<16} ws://{}/", "ran api", addrs.ran_api);

    std::thread::sleep(Duration::from_secs(3));
    let reply = http_get(addrs.exporters["node-core"], "/metrics").expect("endpoint answers");
    println!("\n{reply}");

    let outcome = sim.join().expect("serve thread").expect("run completes");
    println!(
        "done: {} series, {} runtime errors",
        outcome.dump.series.len(),
        outcome.report.errors.len()
    );
}
