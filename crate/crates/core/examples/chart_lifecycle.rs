//! Installs the bundled charts, prints where every workload landed and the
//! CPU transient on the core node, then removes the 5G core again.
//!
//!     cargo run --example chart_lifecycle

use mecsim::cluster::NodeName;
use mecsim::kernel::{SeededRng, SimTime};
use mecsim::testbed::{SimParams, Testbed};

fn main() {
    let mut tb = Testbed::new(SimParams::default()).expect("defaults are valid");
    let mut rng = SeededRng::new(1);
    let core = tb.install_chart("open5gs-core", SimTime(0)).expect("core chart installs");
    let mon = tb.install_chart("monitoring", SimTime(0)).expect("monitoring chart installs");
    println!("installed {core} core and {mon} monitoring workloads");
    for inst in tb.cluster.instances() {
        println!("  {:<14} {:<10} on {}", inst.chart, inst.nf_type, inst.node);
    }

    for t in 0..120 {
        if t == 60 {
            let removed = tb.uninstall_chart("open5gs-core", SimTime(t)).expect("chart removes");
            println!("removed {removed} workloads at {} s", t / 10);
        }
        tb.tick(SimTime(t), &mut rng);
        if t % 10 == 0 {
            let cpu = tb.cluster.node_cpu_util(NodeName::Core, SimTime(t));
            println!("t={:>2} s core cpu {cpu:.3}", t / 10);
        }
    }
    println!("instances left: {}", tb.cluster.instances().count());
}
