//! Constant-bitrate UDP flows (iperf-style) between UEs and the iperf
//! servers on the core and edge nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, NodeName};
use crate::corenet::{CoreNetwork, Direction, NfType, UeId};
use crate::kernel::{SimTime, TICKS_PER_SECOND};
use crate::ran::{FlowDemand, Gnb};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrafficError {
    #[error("UE {0} has no active PDU session")]
    NoSession(UeId),
    #[error("no iperf server is installed on the {0} node")]
    NoServer(NodeName),
    #[error("flow {0} already exists")]
    DuplicateFlowId(String),
    #[error("no flow named {0}")]
    NoSuchFlow(String),
    #[error("flow {0} is already stopped")]
    AlreadyStopped(String),
    #[error("flow rate must be positive")]
    ZeroRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    pub ue: UeId,
    pub direction: Direction,
    pub rate_bps: u64,
    pub server: NodeName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowState {
    Running,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRuntime {
    pub spec: FlowSpec,
    pub state: FlowState,
    pub started_at: SimTime,
    pub stopped_at: Option<SimTime>,
    pub delivered_bytes_total: u64,
    pub stop_reason: Option<String>,
    /// Undelivered remainder, in bits × ticks-per-second.
    #[serde(skip)]
    carry: u64,
}

/// Bytes a flow delivers in one tick, tracked per UE as (downlink, uplink).
pub type UeDelivery = BTreeMap<UeId, (u64, u64)>;

#[derive(Debug, Clone, Default)]
pub struct TrafficGenerator {
    flows: BTreeMap<String, FlowRuntime>,
}

impl TrafficGenerator {
    pub fn new() -> Self {
        TrafficGenerator::default()
    }

    pub fn flow(&self, id: &str) -> Option<&FlowRuntime> {
        self.flows.get(id)
    }

    pub fn flows(&self) -> impl Iterator<Item = &FlowRuntime> {
        self.flows.values()
    }

    pub fn has_running_flows(&self, ue: UeId) -> bool {
        self.flows
            .values()
            .any(|f| f.spec.ue == ue && f.state == FlowState::Running)
    }

    pub fn start_flow(
        &mut self,
        spec: FlowSpec,
        now: SimTime,
        core: &CoreNetwork,
        cluster: &Cluster,
    ) -> Result<String, TrafficError> {
        if spec.rate_bps == 0 {
            return Err(TrafficError::ZeroRate);
        }
        if self.flows.contains_key(&spec.id) {
            return Err(TrafficError::DuplicateFlowId(spec.id));
        }
        if core.active_session(spec.ue).is_none() {
            return Err(TrafficError::NoSession(spec.ue));
        }
        if !cluster.hosts(spec.server, NfType::IperfServer) {
            return Err(TrafficError::NoServer(spec.server));
        }
        let id = spec.id.clone();
        self.flows.insert(
            id.clone(),
            FlowRuntime {
                spec,
                state: FlowState::Running,
                started_at: now,
                stopped_at: None,
                delivered_bytes_total: 0,
                stop_reason: None,
                carry: 0,
            },
        );
        Ok(id)
    }

    pub fn stop_flow(&mut self, id: &str, now: SimTime) -> Result<FlowRuntime, TrafficError> {
        let flow = self
            .flows
            .get_mut(id)
            .ok_or_else(|| TrafficError::NoSuchFlow(id.to_string()))?;
        if flow.state == FlowState::Stopped {
            return Err(TrafficError::AlreadyStopped(id.to_string()));
        }
        flow.state = FlowState::Stopped;
        flow.stopped_at = Some(now);
        flow.carry = 0;
        Ok(flow.clone())
    }

    /// Delivers `dt_ticks` worth of traffic for every running flow through
    /// the cell scheduler and the UE's UPF anchor. Flows whose session has
    /// gone are stopped first. Returns bytes per flow and per UE.
    pub fn tick_deliver(
        &mut self,
        dt_ticks: u64,
        now: SimTime,
        core: &mut CoreNetwork,
        cluster: &mut Cluster,
        gnb: &Gnb,
    ) -> (BTreeMap<String, u64>, UeDelivery) {
        for flow in self.flows.values_mut() {
            if flow.state == FlowState::Running && core.active_session(flow.spec.ue).is_none() {
                flow.state = FlowState::Stopped;
                flow.stopped_at = Some(now);
                flow.stop_reason = Some("session released".into());
                flow.carry = 0;
            }
        }
        let running: Vec<&mut FlowRuntime> = self
            .flows
            .values_mut()
            .filter(|f| f.state == FlowState::Running)
            .collect();
        let demands: Vec<FlowDemand> = running
            .iter()
            .map(|f| FlowDemand {
                ue: f.spec.ue,
                direction: f.spec.direction,
                offered_bps: f.spec.rate_bps,
            })
            .collect();
        let allocations = gnb.schedule_cell(&demands);

        let mut per_flow = BTreeMap::new();
        let mut per_ue = UeDelivery::new();
        for (flow, alloc) in running.into_iter().zip(allocations) {
            // bits per tick = alloc / TICKS_PER_SECOND; bytes = bits / 8
            let denom = TICKS_PER_SECOND * 8;
            flow.carry += alloc * dt_ticks;
            let bytes = flow.carry / denom;
            flow.carry %= denom;
            let session = core
                .active_session(flow.spec.ue)
                .map(|s| s.id)
                .expect("sessionless flows were stopped above");
            let delivered = core
                .upf_forward(session, bytes, flow.spec.direction, cluster)
                .unwrap_or(0);
            flow.delivered_bytes_total += delivered;
            per_flow.insert(flow.spec.id.clone(), delivered);
            let slot = per_ue.entry(flow.spec.ue).or_default();
            match flow.spec.direction {
                Direction::Downlink => slot.0 += delivered,
                Direction::Uplink => slot.1 += delivered,
            }
        }
        (per_flow, per_ue)
    }
}
