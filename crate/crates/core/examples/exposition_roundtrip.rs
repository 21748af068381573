//! Builds a small registry, renders it in the text exposition format and
//! parses it back.
//!
//!     cargo run --example exposition_roundtrip

use mecsim::kernel::SimTime;
use mecsim::monitoring::{parse_exposition, render_exposition, MetricDescriptor, Registry};

fn main() {
    let mut reg = Registry::new();
    reg.register(MetricDescriptor::counter(
        "node_network_transmit_bytes_total",
        "Bytes sent by the node.",
        &["node"],
    ))
    .unwrap();
    reg.register(MetricDescriptor::gauge("ran_ue_snr_db", "Uplink SNR.", &["ue", "cell"]))
        .unwrap();
    let labels = |pairs: &[(&str, &str)]| {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    };
    reg.set("node_network_transmit_bytes_total", labels(&[("node", "core")]), 12_500_000.0)
        .unwrap();
    reg.set("ran_ue_snr_db", labels(&[("ue", "1"), ("cell", "1")]), 16.0).unwrap();
    reg.set("ran_ue_snr_db", labels(&[("ue", "2"), ("cell", "1")]), -2.5).unwrap();

    let text = render_exposition(&reg);
    print!("{text}");
    let parsed = parse_exposition(&text, SimTime::from_secs_whole(30)).expect("own output parses");
    assert_eq!(parsed, reg.samples(SimTime::from_secs_whole(30)));
    println!("\n{} samples survived the round trip", parsed.len());
}
