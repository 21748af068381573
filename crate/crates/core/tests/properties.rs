//! Cross-module properties of the assembled testbed.

use std::collections::{BTreeMap, BTreeSet};

use mecsim::cluster::{Chart, Cluster, ClusterParams, NodeName};
use mecsim::corenet::{
    CoreError, Direction, InstanceId, Locality, NfInstance, NfStatus, NfType, Nrf,
};
use mecsim::kernel::{SeededRng, SimTime};
use mecsim::monitoring::export::write_csv;
use mecsim::monitoring::{parse_csv, Selector, SeriesKey, METRIC_CATALOG};
use mecsim::scenario::model::{Action, Scenario, StartFlowArgs};
use mecsim::scenario::runner::{run_fast, Simulation};
use mecsim::testbed::{ActionError, SimParams, Testbed};
use proptest::prelude::*;

fn none() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

fn step_through(scenario: &Scenario, mut each_tick: impl FnMut(&Simulation)) {
    let mut sim = Simulation::new(scenario, 42, &none()).unwrap();
    while !sim.is_done() {
        let next = sim.now().plus_ticks(1);
        sim.advance_to(next).unwrap();
        each_tick(&sim);
    }
}

#[test]
fn node_counters_never_decrease_and_cpu_stays_in_unit_interval() {
    for scenario in [Scenario::experiment1(), Scenario::experiment2()] {
        let mut last: BTreeMap<NodeName, (u64, u64)> = BTreeMap::new();
        step_through(&scenario, |sim| {
            let t = sim.now();
            for node in NodeName::ALL {
                let snap = sim.testbed.cluster.snapshot(node, t);
                assert!((0.0..=1.0).contains(&snap.cpu_utilization), "{node} at {t}");
                assert!(snap.memory_bytes >= 0.0);
                let prev = last.insert(node, (snap.tx_bytes_total, snap.rx_bytes_total));
                if let Some((tx, rx)) = prev {
                    assert!(snap.tx_bytes_total >= tx && snap.rx_bytes_total >= rx);
                }
            }
        });
    }
}

#[test]
fn stored_counter_series_are_monotone() {
    let out = run_fast(&Scenario::experiment1(), 42, &none()).unwrap();
    for s in out.dump.series.iter().filter(|s| s.name.ends_with("_total")) {
        assert!(
            s.points.windows(2).all(|w| w[1].1 >= w[0].1),
            "{} decreases",
            s.name
        );
    }
}

#[test]
fn every_catalog_metric_is_recorded_in_experiment1() {
    let out = run_fast(&Scenario::experiment1(), 42, &none()).unwrap();
    let store = out.dump.store().unwrap();
    for name in METRIC_CATALOG {
        assert!(store.has_metric(name), "{name} missing");
    }
}

#[test]
fn sampler_gauges_equal_the_link_state_at_each_scrape() {
    let scenario = Scenario::experiment2();
    step_through(&scenario, |sim| {
        let tb = &sim.testbed;
        let Some(at) = tb.monitoring.last_scrape_at() else {
            return;
        };
        // The scrape happened during the tick that just finished.
        if at.plus_ticks(1) != sim.now() {
            return;
        }
        for ue in tb.gnb.attached_ues() {
            let link = tb.gnb.link(ue.ue_id).unwrap();
            let key = SeriesKey::new(
                "ran_ue_snr_db",
                [("cell".to_string(), "1".to_string()), ("ue".to_string(), ue.ue_id.to_string())]
                    .into_iter()
                    .collect(),
            );
            let points = tb.monitoring.store.get(&key).expect("snr series");
            assert_eq!(*points.last().unwrap(), (at, link.snr_db));
        }
    });
}

#[test]
fn chart_lifecycle_round_trips() {
    let mut cluster = Cluster::new(ClusterParams::default());
    let chart = Chart::open5gs_core();
    let before: Vec<usize> = cluster.nodes().map(|n| n.hosted.len()).collect();
    let first = cluster.install_chart(&chart, SimTime(0)).unwrap();
    assert_eq!(first.instances.len(), chart.workloads.len());
    assert!(cluster.hosts(NodeName::Edge, NfType::Upf));
    let removed = cluster.uninstall_chart(&chart.name, SimTime(10)).unwrap();
    assert_eq!(removed.len(), chart.workloads.len());
    let after: Vec<usize> = cluster.nodes().map(|n| n.hosted.len()).collect();
    assert_eq!(before, after);
    assert!(!cluster.hosts(NodeName::Edge, NfType::Upf));
    let second = cluster.install_chart(&chart, SimTime(20)).unwrap();
    let reused: BTreeSet<_> = first.instances.iter().collect();
    assert!(second.instances.iter().all(|id| !reused.contains(id)));
}

#[test]
fn reassignment_is_refused_while_flows_run() {
    let mut tb = Testbed::new(SimParams::default()).unwrap();
    tb.install_chart("open5gs-core", SimTime(0)).unwrap();
    tb.gnb_connect(None).unwrap();
    tb.ue_attach(2, None, SimTime(0)).unwrap();
    let flow = Action::StartFlow(StartFlowArgs {
        flow: "f".into(),
        ue: 2,
        direction: Direction::Downlink,
        rate_mbps: Some(100.0),
        rate_bps: None,
        server: NodeName::Core,
    });
    tb.apply(&flow, SimTime(0)).unwrap();
    let before = tb.core.sessions().to_vec();
    let err = tb.reassign_upf(2, Locality::Edge, SimTime(1)).unwrap_err();
    assert!(matches!(err, ActionError::Core(CoreError::FlowsStillActive(2))));
    assert_eq!(tb.core.sessions(), &before[..]);
}

#[test]
fn no_bytes_flow_for_ue2_between_release_and_new_session() {
    let out = run_fast(&Scenario::experiment1(), 42, &none()).unwrap();
    let store = out.dump.store().unwrap();
    let sel = Selector::parse(r#"ran_ue_downlink_bitrate_bps{ue="2"}"#).unwrap();
    let series = sel.select(&store);
    let dl = &series[0];
    // Window after the reassignment and before the MEC flow starts; the
    // RAN window trails by one second.
    for (t, v) in &dl.points {
        if (91.0..=100.0).contains(&t.as_secs_f64()) {
            assert_eq!(*v, 0.0, "UE2 carried traffic at {t}");
        }
    }
}

#[test]
fn csv_export_round_trips_experiment2_snr() {
    let out = run_fast(&Scenario::experiment2(), 42, &none()).unwrap();
    let store = out.dump.store().unwrap();
    let series = Selector::parse(r#"ran_ue_snr_db{ue="1"}"#)
        .unwrap()
        .select(&store);
    let mut buf = Vec::new();
    let rows = write_csv(&series, &mut buf).unwrap();
    assert_eq!(rows, 130);
    let back = parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back.all_series(), series);
}

#[test]
fn builtin_scenarios_match_their_files() {
    for name in ["experiment1", "experiment2"] {
        let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let loaded = Scenario::load(std::path::Path::new(&path)).unwrap();
        assert_eq!(Some(loaded), Scenario::builtin(name));
    }
}

#[derive(Debug, Clone)]
enum NrfOp {
    Register(u32, NfType, Option<Locality>),
    Deregister(u32),
    Discover(NfType, Option<Locality>),
}

fn arb_nf_type() -> impl Strategy<Value = NfType> {
    prop_oneof![Just(NfType::Amf), Just(NfType::Smf), Just(NfType::Upf), Just(NfType::Nrf)]
}

fn arb_locality() -> impl Strategy<Value = Option<Locality>> {
    prop_oneof![Just(None), Just(Some(Locality::Core)), Just(Some(Locality::Edge))]
}

fn arb_nrf_op() -> impl Strategy<Value = NrfOp> {
    prop_oneof![
        (0u32..12, arb_nf_type(), arb_locality()).prop_map(|(i, t, l)| NrfOp::Register(i, t, l)),
        (0u32..12).prop_map(NrfOp::Deregister),
        (arb_nf_type(), arb_locality()).prop_map(|(t, l)| NrfOp::Discover(t, l)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn nrf_discovery_matches_a_list_model(ops in prop::collection::vec(arb_nrf_op(), 1..80)) {
        let mut nrf = Nrf::default();
        // (id, type, locality, registered), in first-registration order.
        let mut model: Vec<(u32, NfType, Option<Locality>, bool)> = Vec::new();
        for op in ops {
            match op {
                NrfOp::Register(id, nf_type, loc) => {
                    let live = model.iter().any(|m| m.0 == id && m.3);
                    let result = nrf.register(
                        NfInstance {
                            id: InstanceId(id),
                            nf_type,
                            node: NodeName::Core,
                            sbi_address: format!("pod-{id}:7777"),
                            status: NfStatus::Deregistered,
                        },
                        loc,
                    );
                    prop_assert_eq!(result.is_err(), live);
                    if !live {
                        let kept = model.iter().find(|m| m.0 == id).map(|m| m.2);
                        model.retain(|m| m.0 != id);
                        model.push((id, nf_type, loc.or(kept.flatten()), true));
                    }
                }
                NrfOp::Deregister(id) => {
                    let live = model.iter_mut().find(|m| m.0 == id && m.3);
                    let expected = live.is_some();
                    if let Some(m) = live {
                        m.3 = false;
                    }
                    prop_assert_eq!(nrf.deregister(InstanceId(id)), expected);
                }
                NrfOp::Discover(nf_type, loc) => {
                    let got: Vec<u32> = nrf.discover(nf_type, loc).iter().map(|p| p.id.0).collect();
                    let want: Vec<u32> = model
                        .iter()
                        .filter(|m| m.3 && m.1 == nf_type && (loc.is_none() || m.2 == loc))
                        .map(|m| m.0)
                        .collect();
                    prop_assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn snr_follows_the_gain_offset_exactly(offsets in prop::collection::vec(-30.0f64..10.0, 1..20)) {
        let mut tb = Testbed::new(SimParams::default()).unwrap();
        tb.install_chart("open5gs-core", SimTime(0)).unwrap();
        tb.gnb_connect(None).unwrap();
        tb.ue_attach(1, None, SimTime(0)).unwrap();
        let mut rng = SeededRng::new(5);
        for (i, offset) in offsets.iter().enumerate() {
            tb.apply(&Action::SetRxGainOffset { offset_db: *offset }, SimTime(i as u64)).unwrap();
            tb.tick(SimTime(i as u64), &mut rng);
            let link = tb.gnb.link(1).unwrap();
            prop_assert_eq!(link.snr_db, 20.0 + offset);
        }
    }
}
