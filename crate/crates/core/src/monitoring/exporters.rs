//! Node exporters, the RAN sampler and the scrape loop that feeds the
//! series store.

use std::collections::BTreeMap;

use super::exposition::{parse_exposition, render_exposition, MetricDescriptor, Registry};
use super::tsdb::SeriesStore;
use super::{labels, Sample};
use crate::cluster::{Cluster, NodeName, NodeSnapshot};
use crate::corenet::NfType;
use crate::kernel::{SimTime, TICKS_PER_SECOND};
use crate::ran::{parse_stats_response, Gnb};

pub const NODE_CPU: &str = "node_cpu_utilization_ratio";
pub const NODE_MEMORY: &str = "node_memory_bytes";
pub const NODE_TX: &str = "node_network_transmit_bytes_total";
pub const NODE_RX: &str = "node_network_receive_bytes_total";
pub const NF_INSTANCES: &str = "sim_nf_instances";
pub const RAN_DL: &str = "ran_ue_downlink_bitrate_bps";
pub const RAN_UL: &str = "ran_ue_uplink_bitrate_bps";
pub const RAN_MCS_DL: &str = "ran_ue_mcs_dl";
pub const RAN_MCS_UL: &str = "ran_ue_mcs_ul";
pub const RAN_CQI: &str = "ran_ue_cqi";
pub const RAN_SNR: &str = "ran_ue_snr_db";
pub const UP: &str = "up";

pub const METRIC_CATALOG: [&str; 12] = [
    NODE_CPU,
    NODE_MEMORY,
    NODE_TX,
    NODE_RX,
    NF_INSTANCES,
    RAN_DL,
    RAN_UL,
    RAN_MCS_DL,
    RAN_MCS_UL,
    RAN_CQI,
    RAN_SNR,
    UP,
];

const RAN_GAUGES: [&str; 6] = [RAN_DL, RAN_UL, RAN_MCS_DL, RAN_MCS_UL, RAN_CQI, RAN_SNR];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScrapeError {
    #[error("target {0} is down")]
    TargetDown(String),
    #[error("target {target} exposed unparseable text: {message}")]
    BadExposition { target: String, message: String },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplerError {
    #[error("RAN stats API is unreachable")]
    RanApiDown,
}

pub trait Exporter {
    fn target_id(&self) -> &str;

    /// Current exposition text, or `None` when the endpoint is down.
    fn expose(&self) -> Option<String>;
}

pub struct NodeExporter {
    node: NodeName,
    target: String,
    registry: Registry,
}

impl NodeExporter {
    pub fn new(node: NodeName) -> Self {
        let mut registry = Registry::new();
        for d in [
            MetricDescriptor::gauge(NODE_CPU, "CPU utilization of the node", &["node"]),
            MetricDescriptor::gauge(NODE_MEMORY, "Memory in use on the node", &["node"]),
            MetricDescriptor::counter(NODE_TX, "Bytes transmitted by the node", &["node"]),
            MetricDescriptor::counter(NODE_RX, "Bytes received by the node", &["node"]),
            MetricDescriptor::gauge(NF_INSTANCES, "Workloads hosted per NF type", &["node", "nf"]),
        ] {
            registry.register(d).expect("static descriptors are valid");
        }
        NodeExporter {
            node,
            target: format!("node-{}", node.as_str()),
            registry,
        }
    }

    pub fn node(&self) -> NodeName {
        self.node
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn refresh(&mut self, snap: &NodeSnapshot) {
        let node = labels(&[("node", self.node.as_str())]);
        let r = &mut self.registry;
        r.set(NODE_CPU, node.clone(), snap.cpu_utilization)
            .expect("cpu gauge");
        r.set(NODE_MEMORY, node.clone(), snap.memory_bytes)
            .expect("memory gauge");
        r.set(NODE_TX, node.clone(), snap.tx_bytes_total as f64)
            .expect("node counters never decrease");
        r.set(NODE_RX, node, snap.rx_bytes_total as f64)
            .expect("node counters never decrease");
        r.clear_values(NF_INSTANCES);
        for (nf, count) in &snap.nf_counts {
            r.set(
                NF_INSTANCES,
                labels(&[("node", self.node.as_str()), ("nf", nf.as_str())]),
                *count as f64,
            )
            .expect("nf gauge");
        }
    }
}

impl Exporter for NodeExporter {
    fn target_id(&self) -> &str {
        &self.target
    }

    fn expose(&self) -> Option<String> {
        Some(render_exposition(&self.registry))
    }
}

/// Pulls per-UE stats from the gNB API and republishes them as gauges.
pub struct RanSampler {
    registry: Registry,
    up: bool,
    polls: u64,
}

impl Default for RanSampler {
    fn default() -> Self {
        RanSampler::new()
    }
}

impl RanSampler {
    pub fn new() -> Self {
        let mut registry = Registry::new();
        for name in RAN_GAUGES {
            registry
                .register(MetricDescriptor::gauge(name, "", &["ue", "cell"]))
                .expect("static descriptors are valid");
        }
        RanSampler {
            registry,
            up: false,
            polls: 0,
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn is_up(&self) -> bool {
        self.up
    }

    /// Issues one `stats` request through `api` and maps the reply onto the
    /// sampler's gauges. `deployed` is whether the sampler workload is
    /// running; `api` returns `None` if the gNB cannot be reached.
    pub fn poll(
        &mut self,
        deployed: bool,
        api: impl FnOnce(&str) -> Option<String>,
    ) -> Result<usize, SamplerError> {
        for name in RAN_GAUGES {
            self.registry.clear_values(name);
        }
        if !deployed {
            self.up = false;
            return Err(SamplerError::RanApiDown);
        }
        self.polls += 1;
        let request = serde_json::json!({
            "message": "stats",
            "message_id": format!("poll-{}", self.polls),
        })
        .to_string();
        let Some((_, ues)) = api(&request).and_then(|r| parse_stats_response(&r).ok()) else {
            self.up = false;
            return Err(SamplerError::RanApiDown);
        };
        self.up = true;
        let mut updated = 0;
        for ue in ues {
            let l = labels(&[
                ("ue", &ue.ue_id.to_string()),
                ("cell", &ue.cell_id.to_string()),
            ]);
            for (name, v) in [
                (RAN_DL, ue.dl_bitrate),
                (RAN_UL, ue.ul_bitrate),
                (RAN_MCS_DL, ue.mcs_dl as f64),
                (RAN_MCS_UL, ue.mcs_ul as f64),
                (RAN_CQI, ue.cqi as f64),
                (RAN_SNR, ue.snr),
            ] {
                if self.registry.set(name, l.clone(), v).is_ok() {
                    updated += 1;
                }
            }
        }
        Ok(updated)
    }
}

impl Exporter for RanSampler {
    fn target_id(&self) -> &str {
        "sampler"
    }

    fn expose(&self) -> Option<String> {
        self.up.then(|| render_exposition(&self.registry))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScrapeTarget {
    pub id: String,
    pub interval_ticks: u64,
}

impl ScrapeTarget {
    pub fn new(id: &str, interval_s: f64) -> Self {
        let interval_ticks = ((interval_s * TICKS_PER_SECOND as f64).round() as u64).max(1);
        ScrapeTarget {
            id: id.to_string(),
            interval_ticks,
        }
    }

    pub fn due(&self, t: SimTime) -> bool {
        t.ticks().is_multiple_of(self.interval_ticks)
    }
}

fn up_sample(target: &str, value: f64, t: SimTime) -> Sample {
    Sample {
        name: UP.into(),
        labels: labels(&[("target", target)]),
        value,
        timestamp: t,
    }
}

/// Scrapes one exporter into `store`. Success also records `up=1`; a down
/// target records only `up=0`. Returns the number of exporter samples
/// appended.
pub fn scrape(
    exporter: &dyn Exporter,
    t: SimTime,
    store: &mut SeriesStore,
) -> Result<usize, ScrapeError> {
    let target = exporter.target_id();
    let Some(text) = exporter.expose() else {
        let _ = store.append(up_sample(target, 0.0, t));
        return Err(ScrapeError::TargetDown(target.to_string()));
    };
    let samples = parse_exposition(&text, t).map_err(|e| ScrapeError::BadExposition {
        target: target.to_string(),
        message: e.to_string(),
    })?;
    let count = samples.len();
    for s in samples {
        store
            .append(s)
            .map_err(|e| ScrapeError::BadExposition {
                target: target.to_string(),
                message: e.to_string(),
            })?;
    }
    let _ = store.append(up_sample(target, 1.0, t));
    Ok(count)
}

/// Everything the monitoring node runs: four node exporters, the RAN
/// sampler and the scraper's store.
pub struct MonitoringPlane {
    pub node_exporters: Vec<NodeExporter>,
    pub sampler: RanSampler,
    pub store: SeriesStore,
    pub targets: Vec<ScrapeTarget>,
    last_exposition: BTreeMap<String, Option<String>>,
    last_scrape_at: Option<SimTime>,
}

impl MonitoringPlane {
    pub fn new(interval_s: f64) -> Self {
        let node_exporters: Vec<NodeExporter> =
            NodeName::ALL.into_iter().map(NodeExporter::new).collect();
        let mut targets: Vec<ScrapeTarget> = node_exporters
            .iter()
            .map(|e| ScrapeTarget::new(e.target_id(), interval_s))
            .collect();
        targets.push(ScrapeTarget::new("sampler", interval_s));
        MonitoringPlane {
            node_exporters,
            sampler: RanSampler::new(),
            store: SeriesStore::new(),
            targets,
            last_exposition: BTreeMap::new(),
            last_scrape_at: None,
        }
    }

    pub fn last_scrape_at(&self) -> Option<SimTime> {
        self.last_scrape_at
    }

    /// Exposition text of each target at its last scrape.
    pub fn last_exposition(&self) -> &BTreeMap<String, Option<String>> {
        &self.last_exposition
    }

    /// Refreshes exporters from the live state and scrapes every target
    /// that is due at `t`. Returns whether anything was scraped.
    pub fn collect(&mut self, t: SimTime, cluster: &Cluster, gnb: &mut Gnb) -> bool {
        let due: Vec<String> = self
            .targets
            .iter()
            .filter(|tg| tg.due(t))
            .map(|tg| tg.id.clone())
            .collect();
        if due.is_empty() {
            return false;
        }
        for exp in &mut self.node_exporters {
            if due.iter().any(|d| d == exp.target_id()) {
                exp.refresh(&cluster.snapshot(exp.node(), t));
            }
        }
        if due.iter().any(|d| d == "sampler") {
            let deployed = cluster
                .instances()
                .any(|i| i.nf_type == NfType::Sampler);
            let _ = self
                .sampler
                .poll(deployed, |req| Some(gnb.handle_api(req, t)));
        }
        let exporters: Vec<&dyn Exporter> = self
            .node_exporters
            .iter()
            .map(|e| e as &dyn Exporter)
            .chain(std::iter::once(&self.sampler as &dyn Exporter))
            .collect();
        for exp in exporters {
            if !due.iter().any(|d| d == exp.target_id()) {
                continue;
            }
            self.last_exposition
                .insert(exp.target_id().to_string(), exp.expose());
            let _ = scrape(exp, t, &mut self.store);
        }
        self.last_scrape_at = Some(t);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Chart;
    use crate::corenet::InstanceId;
    use crate::monitoring::tsdb::LabelFilter;
    use crate::ran::{GnbConfig, LinkTables};
    use std::net::Ipv4Addr;

    #[test]
    fn idle_node_exposition() {
        let cluster = Cluster::default();
        let mut exp = NodeExporter::new(NodeName::Core);
        exp.refresh(&cluster.snapshot(NodeName::Core, SimTime::ZERO));
        let text = exp.expose().unwrap();
        assert!(text.contains("node_cpu_utilization_ratio{node=\"core\"} 0.05\n"));
        assert!(text.contains("node_network_transmit_bytes_total{node=\"core\"} 0\n"));
        let mut store = SeriesStore::new();
        // cpu, memory, tx, rx; no NF hosted yet.
        assert_eq!(scrape(&exp, SimTime::ZERO, &mut store).unwrap(), 4);
        assert_eq!(store.series_count(), 5);
    }

    #[test]
    fn transmit_counter_after_one_second() {
        let mut cluster = Cluster::default();
        for _ in 0..10 {
            cluster.account_traffic(NodeName::Core, 1_250_000, 0);
            cluster.end_tick();
        }
        let mut exp = NodeExporter::new(NodeName::Core);
        exp.refresh(&cluster.snapshot(NodeName::Core, SimTime(10)));
        assert!(exp
            .expose()
            .unwrap()
            .contains("node_network_transmit_bytes_total{node=\"core\"} 12500000\n"));
    }

    #[test]
    fn nf_gauge_keeps_zero_after_removal() {
        let mut cluster = Cluster::default();
        cluster.install_chart(&Chart::monitoring(), SimTime(0)).unwrap();
        let mut exp = NodeExporter::new(NodeName::Monitoring);
        exp.refresh(&cluster.snapshot(NodeName::Monitoring, SimTime(0)));
        assert!(exp
            .expose()
            .unwrap()
            .contains("sim_nf_instances{nf=\"SAMPLER\",node=\"monitoring\"} 1"));
        cluster.uninstall_chart("monitoring", SimTime(1)).unwrap();
        exp.refresh(&cluster.snapshot(NodeName::Monitoring, SimTime(1)));
        assert!(exp
            .expose()
            .unwrap()
            .contains("sim_nf_instances{nf=\"SAMPLER\",node=\"monitoring\"} 0"));
    }

    fn gnb_with_ues(n: u32) -> Gnb {
        let mut gnb = Gnb::new(GnbConfig::default(), LinkTables::default()).unwrap();
        gnb.connect("192.168.1.10:38412", InstanceId(1));
        for ue in 1..=n {
            gnb.attach(ue, Ipv4Addr::new(10, 45, 0, 1 + ue as u8), None)
                .unwrap();
        }
        gnb
    }

    #[test]
    fn sampler_maps_six_gauges_per_ue() {
        let mut gnb = gnb_with_ues(2);
        let mut sampler = RanSampler::new();
        let n = sampler
            .poll(true, |req| Some(gnb.handle_api(req, SimTime(0))))
            .unwrap();
        assert_eq!(n, 12);
        gnb.set_rx_gain_offset(-12.0);
        gnb.refresh_links(&mut crate::kernel::SeededRng::new(0));
        sampler
            .poll(true, |req| Some(gnb.handle_api(req, SimTime(1))))
            .unwrap();
        assert!(sampler
            .expose()
            .unwrap()
            .contains("ran_ue_snr_db{cell=\"1\",ue=\"1\"} 8\n"));
    }

    #[test]
    fn sampler_down_before_install() {
        let mut sampler = RanSampler::new();
        assert_eq!(
            sampler.poll(false, |_| unreachable!()),
            Err(SamplerError::RanApiDown)
        );
        let mut store = SeriesStore::new();
        assert_eq!(
            scrape(&sampler, SimTime(0), &mut store),
            Err(ScrapeError::TargetDown("sampler".into()))
        );
        let up = store.query_range(
            UP,
            &LabelFilter::eq(&[("target", "sampler")]),
            SimTime(0),
            SimTime(0),
        );
        assert_eq!(up[0].points, vec![(SimTime(0), 0.0)]);
        assert_eq!(store.series_count(), 1);
    }

    #[test]
    fn scrape_matches_registry_snapshot() {
        let mut gnb = gnb_with_ues(1);
        let mut sampler = RanSampler::new();
        sampler
            .poll(true, |req| Some(gnb.handle_api(req, SimTime(20))))
            .unwrap();
        let mut store = SeriesStore::new();
        scrape(&sampler, SimTime(20), &mut store).unwrap();
        for s in sampler.registry().samples(SimTime(20)) {
            let got = store.query_range(
                &s.name,
                &LabelFilter(s.labels.clone().into_iter().collect()),
                SimTime(20),
                SimTime(20),
            );
            assert_eq!(got[0].points, vec![(SimTime(20), s.value)]);
        }
    }
}
