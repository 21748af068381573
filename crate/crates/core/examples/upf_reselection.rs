//! Attaches a UE through the core UPF, moves its session to the edge UPF
//! and shows where its bytes are counted.
//!
//!     cargo run --example upf_reselection

use mecsim::cluster::NodeName;
use mecsim::corenet::{Direction, Locality};
use mecsim::kernel::{SeededRng, SimTime};
use mecsim::scenario::model::{Action, StartFlowArgs};
use mecsim::testbed::{SimParams, Testbed};

fn run_flow(tb: &mut Testbed, server: NodeName, from: u64, rng: &mut SeededRng) -> u64 {
    let flow = StartFlowArgs {
        flow: format!("dl-{}", server.as_str()),
        ue: 2,
        direction: Direction::Downlink,
        rate_mbps: Some(100.0),
        rate_bps: None,
        server,
    };
    tb.apply(&Action::StartFlow(flow.clone()), SimTime(from)).expect("flow starts");
    for t in from..from + 10 {
        tb.tick(SimTime(t), rng);
    }
    tb.apply(&Action::StopFlow { flow: flow.flow }, SimTime(from + 10)).expect("flow stops");
    from + 10
}

fn print_counters(tb: &Testbed) {
    for node in [NodeName::Core, NodeName::Edge] {
        let (tx, _) = tb.node_counters(node);
        println!("  {node:<5} tx {tx:>11} bytes");
    }
}

fn main() {
    let mut tb = Testbed::new(SimParams::default()).expect("defaults are valid");
    let mut rng = SeededRng::new(1);
    tb.install_chart("open5gs-core", SimTime(0)).expect("chart installs");
    tb.gnb_connect(None).expect("AMF is registered");
    tb.ue_attach(1, None, SimTime(0)).expect("UE1 attaches");
    tb.ue_attach(2, None, SimTime(0)).expect("UE2 attaches");

    let t = run_flow(&mut tb, NodeName::Core, 0, &mut rng);
    println!("after one second through the core UPF:");
    print_counters(&tb);

    tb.reassign_upf(2, Locality::Edge, SimTime(t)).expect("edge UPF exists");
    run_flow(&mut tb, NodeName::Edge, t, &mut rng);
    println!("after one second through the edge UPF:");
    print_counters(&tb);

    println!("sessions:");
    for s in tb.session_table() {
        println!("  ue{} {} via {} released {:?}", s.ue, s.ue_ip, s.upf, s.released_s);
    }
    tb.core.check_invariants().expect("session invariants hold");
}
