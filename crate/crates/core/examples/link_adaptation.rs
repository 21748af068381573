//! Sweeps the receive gain offset and prints the SNR, CQI, MCS and the
//! capacity the gNB grants one UE.
//!
//!     cargo run --example link_adaptation

use std::net::Ipv4Addr;

use mecsim::corenet::InstanceId;
use mecsim::kernel::SeededRng;
use mecsim::ran::{Gnb, GnbConfig, LinkTables};

fn main() {
    let mut gnb = Gnb::new(GnbConfig::default(), LinkTables::default()).expect("default config is valid");
    gnb.connect("192.168.1.10:38412", InstanceId(1));
    gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), None).expect("fresh UE attaches");
    let mut rng = SeededRng::new(0);
    println!("{:>7} {:>7} {:>4} {:>4} {:>12}", "offset", "snr", "cqi", "mcs", "capacity");
    for offset in (-28..=4).step_by(2) {
        gnb.set_rx_gain_offset(offset as f64);
        let link = gnb.compute_link(1, &mut rng).expect("UE is attached");
        println!(
            "{:>7} {:>7.1} {:>4} {:>4} {:>9.3} Mb",
            offset,
            link.snr_db,
            link.cqi,
            link.mcs,
            link.capacity_bps as f64 / 1e6
        );
    }
}
