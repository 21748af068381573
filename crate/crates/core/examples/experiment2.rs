//! Replays the gain-reduction experiment and prints the per-second uplink
//! link state of UE1 around each step.
//!
//!     cargo run --example experiment2 [noise_std_db]

use std::collections::BTreeMap;

use mecsim::monitoring::Selector;
use mecsim::scenario::model::Scenario;
use mecsim::scenario::runner::run_fast;

fn main() {
    let noise: f64 = std::env::args().nth(1).map_or(0.0, |a| a.parse().expect("noise in dB"));
    let overrides = BTreeMap::from([("snr_noise_std_db".to_string(), noise)]);
    let out = run_fast(&Scenario::experiment2(), 42, &overrides).expect("built-in scenario runs");
    let store = out.dump.store().expect("dump reloads");
    let column = |sel: &str| Selector::parse(sel).unwrap().select(&store).remove(0).points;
    let snr = column(r#"ran_ue_snr_db{ue="1"}"#);
    let cqi = column(r#"ran_ue_cqi{ue="1"}"#);
    let mcs = column(r#"ran_ue_mcs_ul{ue="1"}"#);
    let ul = column(r#"ran_ue_uplink_bitrate_bps{ue="1"}"#);
    println!("{:>5} {:>8} {:>4} {:>4} {:>10}", "t", "snr", "cqi", "mcs", "ul Mbps");
    for i in (0..snr.len()).filter(|i| i % 10 == 8 || i % 10 == 1) {
        println!(
            "{:>5} {:>8.3} {:>4} {:>4} {:>10.3}",
            snr[i].0.as_secs_f64(),
            snr[i].1,
            cqi[i].1,
            mcs[i].1,
            ul[i].1 / 1e6
        );
    }
    let failed: Vec<_> = out.report.failed().map(|a| a.id.as_str()).collect();
    println!("failed assertions: {failed:?}");
}
