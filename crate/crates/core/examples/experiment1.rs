//! Replays the MEC offloading experiment and prints each assertion with the
//! session history of both UEs.
//!
//!     cargo run --example experiment1

use std::collections::BTreeMap;

use mecsim::scenario::model::Scenario;
use mecsim::scenario::runner::run_fast;

fn main() {
    let out = run_fast(&Scenario::experiment1(), 42, &BTreeMap::new()).expect("built-in scenario runs");
    for a in &out.report.assertions {
        let verdict = if a.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {:<28} {} (bound {})", a.id, a.measured, a.bound);
    }
    println!();
    for s in &out.report.sessions {
        let end = s.released_s.map_or("-".to_string(), |t| format!("{t}"));
        println!("ue{} {}@{} [{}, {}]", s.ue, s.ue_ip, s.upf, s.established_s, end);
    }
}
