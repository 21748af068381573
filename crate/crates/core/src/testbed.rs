//! The simulated testbed: cluster, 5G core, gNB, traffic generator and
//! monitoring plane, driven by the kernel's event queue and tick hook.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{Chart, Cluster, ClusterError, ClusterParams, NodeName};
use crate::corenet::{CoreError, CoreNetwork, NfInstance, NfStatus, NfType};
use crate::kernel::{Handler, Kernel, SimTime};
use crate::monitoring::{MonitoringPlane, SessionRecord};
use crate::ran::{Gnb, GnbConfig, LinkTables, RanError};
use crate::scenario::model::Action;
use crate::traffic::{TrafficError, TrafficGenerator};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OverrideError {
    #[error("unknown override key {0:?}")]
    UnknownKey(String),
    #[error("override {key} = {value} is out of range")]
    OutOfRange { key: String, value: f64 },
}

pub const OVERRIDE_KEYS: [&str; 9] = [
    "snr_noise_std_db",
    "bandwidth_hz",
    "overhead_factor",
    "snr_ref_db",
    "cpu_base",
    "transient_height",
    "transient_duration_s",
    "cpu_per_gbps",
    "scrape_interval_s",
];

/// Every tunable coefficient of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub cluster: ClusterParams,
    pub gnb: GnbConfig,
    pub tables: LinkTables,
    pub scrape_interval_s: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            cluster: ClusterParams::default(),
            gnb: GnbConfig::default(),
            tables: LinkTables::default(),
            scrape_interval_s: 1.0,
        }
    }
}

impl SimParams {
    pub fn with_overrides(overrides: &BTreeMap<String, f64>) -> Result<Self, OverrideError> {
        let mut p = SimParams::default();
        for (k, v) in overrides {
            p.apply_override(k, *v)?;
        }
        Ok(p)
    }

    pub fn apply_override(&mut self, key: &str, value: f64) -> Result<(), OverrideError> {
        let out_of_range = || OverrideError::OutOfRange {
            key: key.to_string(),
            value,
        };
        if !value.is_finite() {
            return Err(out_of_range());
        }
        let non_negative = |v: f64| if v >= 0.0 { Ok(v) } else { Err(out_of_range()) };
        match key {
            "snr_noise_std_db" => self.gnb.snr_noise_std_db = non_negative(value)?,
            "bandwidth_hz" => self.gnb.bandwidth_hz = value,
            "overhead_factor" => self.gnb.overhead_factor = value,
            "snr_ref_db" => self.gnb.default_snr_ref_db = value,
            "cpu_base" => self.cluster.node_cpu_base = non_negative(value)?,
            "transient_height" => self.cluster.transient_height = non_negative(value)?,
            "transient_duration_s" => self.cluster.transient_duration_s = non_negative(value)?,
            "cpu_per_gbps" => self.cluster.cpu_per_gbps = non_negative(value)?,
            "scrape_interval_s" => {
                if value < 0.1 {
                    return Err(out_of_range());
                }
                self.scrape_interval_s = value;
            }
            other => return Err(OverrideError::UnknownKey(other.to_string())),
        }
        if self.gnb.validate().is_err() {
            return Err(out_of_range());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ActionError {
    #[error("no chart named {0}")]
    UnknownChart(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Ran(#[from] RanError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

/// A scenario action that failed at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeError {
    pub at_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
    pub action: String,
    pub message: String,
}

/// One kernel event: every scenario action sharing a timestamp, in script
/// order, or a control message arriving from outside the loop.
#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    Step(Vec<(Option<String>, Action)>),
    Control(Action),
}

/// Byte totals observed in one tick, for conservation checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickLedger {
    pub flow_bytes: u64,
    pub upf_bytes: u64,
    pub node_bytes: u64,
}

pub struct Testbed {
    pub params: SimParams,
    pub cluster: Cluster,
    pub core: CoreNetwork,
    pub gnb: Gnb,
    pub traffic: TrafficGenerator,
    pub monitoring: MonitoringPlane,
    pub errors: Vec<RuntimeError>,
    pub last_tick: TickLedger,
    charts: BTreeMap<String, Chart>,
}

impl Testbed {
    pub fn new(params: SimParams) -> Result<Self, RanError> {
        let gnb = Gnb::new(params.gnb.clone(), params.tables.clone())?;
        let charts = [Chart::open5gs_core(), Chart::monitoring()]
            .into_iter()
            .map(|c| (c.name.clone(), c))
            .collect();
        Ok(Testbed {
            cluster: Cluster::new(params.cluster.clone()),
            core: CoreNetwork::new(),
            gnb,
            traffic: TrafficGenerator::new(),
            monitoring: MonitoringPlane::new(params.scrape_interval_s),
            errors: Vec::new(),
            last_tick: TickLedger::default(),
            charts,
            params,
        })
    }

    /// Makes `chart` installable by name, replacing a bundled chart of the
    /// same name.
    pub fn add_chart(&mut self, chart: Chart) {
        self.charts.insert(chart.name.clone(), chart);
    }

    pub fn install_chart(&mut self, name: &str, now: SimTime) -> Result<usize, ActionError> {
        let chart = self
            .charts
            .get(name)
            .ok_or_else(|| ActionError::UnknownChart(name.to_string()))?;
        let handle = self.cluster.install_chart(chart, now)?;
        for id in &handle.instances {
            let inst = self.cluster.instance(*id).expect("just installed");
            if !inst.nf_type.is_core_nf() {
                continue;
            }
            let profile = NfInstance {
                id: inst.id,
                nf_type: inst.nf_type,
                node: inst.node,
                sbi_address: format!("{}:7777", inst.pod_address),
                status: NfStatus::Registered,
            };
            self.core.nrf_register(profile, inst.locality)?;
        }
        Ok(handle.instances.len())
    }

    pub fn uninstall_chart(&mut self, name: &str, now: SimTime) -> Result<usize, ActionError> {
        let removed = self.cluster.uninstall_chart(name, now)?;
        for inst in &removed {
            self.core.nrf_deregister(inst.id, now);
        }
        self.drop_orphans();
        Ok(removed.len())
    }

    /// Tears down radio state the core no longer backs: the association
    /// when its AMF is gone, and UEs left without a session.
    fn drop_orphans(&mut self) {
        if let Some(assoc) = self.gnb.association() {
            if !self.core.nrf.is_registered(assoc.amf) {
                self.gnb.disconnect();
            }
        }
        let orphans: Vec<_> = self
            .gnb
            .attached_ues()
            .map(|u| u.ue_id)
            .filter(|ue| self.core.active_session(*ue).is_none())
            .collect();
        for ue in orphans {
            self.gnb.detach(ue);
        }
    }

    fn resolve_amf(&self, address: &str) -> Result<crate::corenet::InstanceId, RanError> {
        let unreachable = || RanError::AmfUnreachable(address.to_string());
        let (host, port) = address.rsplit_once(':').ok_or_else(unreachable)?;
        let port: u16 = port.parse().map_err(|_| unreachable())?;
        let id = self
            .cluster
            .resolve_address(host, port)
            .map_err(|_| unreachable())?;
        match self.cluster.instance(id) {
            Some(inst) if inst.nf_type == NfType::Amf && self.core.nrf.is_registered(id) => Ok(id),
            _ => Err(unreachable()),
        }
    }

    pub fn gnb_connect(&mut self, amf_address: Option<&str>) -> Result<(), ActionError> {
        let address = amf_address
            .map(str::to_string)
            .unwrap_or_else(|| self.gnb.config.amf_address.clone());
        let amf = self.resolve_amf(&address)?;
        self.gnb.connect(&address, amf);
        Ok(())
    }

    pub fn ue_attach(
        &mut self,
        ue: u32,
        snr_ref_db: Option<f64>,
        now: SimTime,
    ) -> Result<(), ActionError> {
        let assoc = self.gnb.association().ok_or(RanError::NotConnected)?;
        let address = assoc.amf_address.clone();
        if self.gnb.ue(ue).is_some_and(|u| u.attached) {
            return Err(RanError::AlreadyAttached(ue).into());
        }
        self.resolve_amf(&address)?;
        let (_, session) = self.core.amf_register_ue(ue, now)?;
        self.gnb.attach(ue, session.ue_ip, snr_ref_db)?;
        Ok(())
    }

    pub fn reassign_upf(
        &mut self,
        ue: u32,
        target: crate::corenet::Locality,
        now: SimTime,
    ) -> Result<(), ActionError> {
        let busy = self.traffic.has_running_flows(ue);
        let session = self.core.smf_reassign_upf(ue, target, busy, now)?;
        self.gnb.set_ue_ip(ue, session.ue_ip);
        Ok(())
    }

    pub fn apply(&mut self, action: &Action, now: SimTime) -> Result<(), ActionError> {
        match action {
            Action::InstallChart { chart } => self.install_chart(chart, now).map(drop),
            Action::UninstallChart { chart } => self.uninstall_chart(chart, now).map(drop),
            Action::GnbConnect { amf_address } => self.gnb_connect(amf_address.as_deref()),
            Action::UeAttach { ue, snr_ref_db } => self.ue_attach(*ue, *snr_ref_db, now),
            Action::StartFlow(args) => {
                self.traffic
                    .start_flow(args.to_spec(), now, &self.core, &self.cluster)?;
                Ok(())
            }
            Action::StopFlow { flow } => self.traffic.stop_flow(flow, now).map(drop).map_err(Into::into),
            Action::ReassignUpf { ue, target } => self.reassign_upf(*ue, *target, now),
            Action::SetRxGainOffset { offset_db } => {
                self.gnb.set_rx_gain_offset(*offset_db);
                Ok(())
            }
        }
    }

    fn apply_logged(&mut self, step: Option<String>, action: &Action, now: SimTime) {
        if let Err(e) = self.apply(action, now) {
            self.errors.push(RuntimeError {
                at_s: now.as_secs_f64(),
                step,
                action: action.name().to_string(),
                message: e.to_string(),
            });
        }
    }

    /// Advances the data plane and monitoring by one tick at `now`.
    pub fn tick(&mut self, now: SimTime, kernel_rng: &mut crate::kernel::SeededRng) {
        self.gnb.refresh_links(kernel_rng);
        self.monitoring.collect(now, &self.cluster, &mut self.gnb);

        let upf_before: u64 = self.core.upfs().map(|u| u.forwarded_bytes).sum();
        let node_before = self.node_bytes();
        let (per_flow, per_ue) =
            self.traffic
                .tick_deliver(1, now, &mut self.core, &mut self.cluster, &self.gnb);
        self.last_tick = TickLedger {
            flow_bytes: per_flow.values().sum(),
            upf_bytes: self.core.upfs().map(|u| u.forwarded_bytes).sum::<u64>() - upf_before,
            node_bytes: self.node_bytes() - node_before,
        };
        self.gnb.end_tick(&per_ue);
        self.cluster.end_tick();
    }

    fn node_bytes(&self) -> u64 {
        self.cluster
            .nodes()
            .map(|n| n.tx_bytes_total + n.rx_bytes_total)
            .sum()
    }

    pub fn session_table(&self) -> Vec<SessionRecord> {
        self.core
            .sessions()
            .iter()
            .map(|s| SessionRecord {
                session_id: s.id.0,
                ue: s.ue,
                upf: s.locality.as_str().to_string(),
                ue_ip: s.ue_ip.to_string(),
                established_s: s.established_at.as_secs_f64(),
                released_s: s.released_at.map(SimTime::as_secs_f64),
            })
            .collect()
    }

    pub fn node_counters(&self, node: NodeName) -> (u64, u64) {
        let n = self.cluster.node(node);
        (n.tx_bytes_total, n.rx_bytes_total)
    }
}

impl Handler<SimEvent> for Testbed {
    fn on_event(&mut self, kernel: &mut Kernel<SimEvent>, event: SimEvent) {
        let now = kernel.now();
        match event {
            SimEvent::Step(actions) => {
                for (step, action) in actions {
                    self.apply_logged(step, &action, now);
                }
            }
            SimEvent::Control(action) => self.apply_logged(Some("control".into()), &action, now),
        }
    }

    fn on_tick(&mut self, kernel: &mut Kernel<SimEvent>) {
        let now = kernel.now();
        self.tick(now, kernel.rng());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corenet::{Direction, Locality};
    use crate::scenario::model::StartFlowArgs;

    fn ready() -> Testbed {
        let mut tb = Testbed::new(SimParams::default()).unwrap();
        let t = SimTime(0);
        tb.install_chart("open5gs-core", t).unwrap();
        tb.install_chart("monitoring", t).unwrap();
        tb.gnb_connect(None).unwrap();
        tb.ue_attach(1, None, t).unwrap();
        tb.ue_attach(2, None, t).unwrap();
        tb
    }

    #[test]
    fn overrides_validate_keys_and_ranges() {
        let mut p = SimParams::default();
        p.apply_override("snr_noise_std_db", 0.5).unwrap();
        assert_eq!(p.gnb.snr_noise_std_db, 0.5);
        assert_eq!(
            p.apply_override("warp", 1.0),
            Err(OverrideError::UnknownKey("warp".into()))
        );
        assert!(p.apply_override("overhead_factor", 1.5).is_err());
        assert!(p.apply_override("cpu_base", -0.1).is_err());
    }

    #[test]
    fn connect_before_install_is_unreachable() {
        let mut tb = Testbed::new(SimParams::default()).unwrap();
        assert!(matches!(
            tb.gnb_connect(None),
            Err(ActionError::Ran(RanError::AmfUnreachable(_)))
        ));
        assert_eq!(
            tb.ue_attach(1, None, SimTime(0)),
            Err(ActionError::Ran(RanError::NotConnected))
        );
    }

    #[test]
    fn attach_order_sets_addresses() {
        let tb = ready();
        let ips: Vec<_> = tb.session_table().into_iter().map(|r| r.ue_ip).collect();
        assert_eq!(ips, vec!["10.45.0.2", "10.45.0.3"]);
        assert_eq!(tb.core.nrf_discover(NfType::Upf, None).len(), 2);
        assert!(tb.core.nrf_discover(NfType::Sampler, None).is_empty());
    }

    #[test]
    fn reselection_moves_traffic_to_edge() {
        let mut tb = ready();
        let mut rng = crate::kernel::SeededRng::new(1);
        tb.reassign_upf(2, Locality::Edge, SimTime(0)).unwrap();
        assert_eq!(tb.gnb.ue(2).unwrap().ue_ip, Some("10.46.0.2".parse().unwrap()));
        tb.apply(
            &Action::StartFlow(StartFlowArgs {
                flow: "f".into(),
                ue: 2,
                direction: Direction::Downlink,
                rate_mbps: Some(100.0),
                rate_bps: None,
                server: NodeName::Edge,
            }),
            SimTime(0),
        )
        .unwrap();
        for t in 0..10 {
            tb.tick(SimTime(t), &mut rng);
        }
        assert_eq!(tb.node_counters(NodeName::Edge).0, 12_500_000);
        assert_eq!(tb.node_counters(NodeName::Core).0, 0);
    }

    #[test]
    fn uninstall_detaches_and_disconnects() {
        let mut tb = ready();
        assert_eq!(tb.uninstall_chart("open5gs-core", SimTime(5)).unwrap(), 14);
        assert!(tb.gnb.association().is_none());
        assert_eq!(tb.gnb.attached_ues().count(), 0);
        assert!(tb.session_table().iter().all(|r| r.released_s == Some(0.5)));
        assert!(matches!(
            tb.gnb_connect(None),
            Err(ActionError::Ran(RanError::AmfUnreachable(_)))
        ));
    }

    #[test]
    fn failed_actions_are_logged_not_fatal() {
        let mut tb = Testbed::new(SimParams::default()).unwrap();
        let mut kernel = Kernel::new(0);
        kernel
            .schedule(
                SimTime(3),
                SimEvent::Step(vec![(
                    Some("#x".into()),
                    Action::StopFlow { flow: "nope".into() },
                )]),
            )
            .unwrap();
        kernel.run_until(SimTime(10), &mut tb).unwrap();
        assert_eq!(tb.errors.len(), 1);
        assert_eq!(tb.errors[0].at_s, 0.3);
        assert_eq!(tb.errors[0].step.as_deref(), Some("#x"));
    }
}
