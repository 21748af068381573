//! Talks to the gNB stats/control API in process: one stats request, a
//! config_set that lowers the gain, and a second stats request.
//!
//!     cargo run --example ran_stats_api

use mecsim::kernel::{SeededRng, SimTime};
use mecsim::testbed::{SimParams, Testbed};

fn main() {
    let mut tb = Testbed::new(SimParams::default()).expect("defaults are valid");
    let mut rng = SeededRng::new(1);
    tb.install_chart("open5gs-core", SimTime(0)).expect("chart installs");
    tb.gnb_connect(None).expect("AMF is registered");
    tb.ue_attach(1, None, SimTime(0)).expect("UE1 attaches");
    tb.tick(SimTime(0), &mut rng);

    let requests = [
        r#"{"message":"stats","message_id":"1"}"#,
        r#"{"message":"config_set","message_id":"2","rx_gain_offset_db":-8}"#,
        r#"{"message":"stats","message_id":"3"}"#,
        r#"{"message":"reboot","message_id":"4"}"#,
    ];
    for (i, req) in requests.iter().enumerate() {
        let now = SimTime(i as u64 + 1);
        tb.tick(now, &mut rng);
        println!("> {req}");
        println!("< {}", tb.gnb.handle_api(req, now));
    }
}
