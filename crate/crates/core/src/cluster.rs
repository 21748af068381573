//! The four-node testbed cluster: chart install/uninstall, service exposure
//! and the per-node CPU/network resource model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corenet::{InstanceId, Locality, NfType};
use crate::kernel::{SimTime, TICKS_PER_SECOND};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClusterError {
    #[error("chart {0} is already installed")]
    DuplicateChart(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("deployment {0} was already removed")]
    AlreadyRemoved(String),
    #[error("no chart named {0} is installed")]
    NoSuchChart(String),
    #[error("port {0} is already exposed on the master node")]
    PortInUse(u16),
    #[error("no installed instance {0}")]
    NoSuchInstance(InstanceId),
    #[error("service {0} is not exposed")]
    NoSuchService(String),
    #[error("service {0} has no installed backing instance")]
    ServiceUnavailable(String),
    #[error("invalid chart document: {0}")]
    ChartFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeName {
    Master,
    Core,
    Edge,
    Monitoring,
}

impl NodeName {
    pub const ALL: [NodeName; 4] = [
        NodeName::Master,
        NodeName::Core,
        NodeName::Edge,
        NodeName::Monitoring,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeName::Master => "master",
            NodeName::Core => "core",
            NodeName::Edge => "edge",
            NodeName::Monitoring => "monitoring",
        }
    }

    fn index(self) -> u8 {
        match self {
            NodeName::Master => 0,
            NodeName::Core => 1,
            NodeName::Edge => 2,
            NodeName::Monitoring => 3,
        }
    }

    pub fn default_address(self) -> String {
        format!("192.168.1.{}", 10 + self.index())
    }
}

impl fmt::Display for NodeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeName {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ClusterError::UnknownNode(s.to_string()))
    }
}

/// Resource model coefficients. All are overridable per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub node_cpu_base: f64,
    pub transient_height: f64,
    pub transient_duration_s: f64,
    pub cpu_per_gbps: f64,
    pub memory_base_bytes: f64,
    pub memory_per_instance_bytes: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            node_cpu_base: 0.05,
            transient_height: 0.3,
            transient_duration_s: 5.0,
            cpu_per_gbps: 0.15,
            memory_base_bytes: 2.0 * 1024.0 * 1024.0 * 1024.0,
            memory_per_instance_bytes: 128.0 * 1024.0 * 1024.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub nf_type: NfType,
    pub node: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_base: Option<f64>,
    /// UPF anchor locality; inferred from the node when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locality: Option<Locality>,
}

/// A service the chart exposes on the master node once installed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub nf_type: NfType,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub name: String,
    #[serde(default)]
    pub workloads: Vec<Workload>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub services: Vec<ServiceSpec>,
}

const CORE_CHART: &str = include_str!("../../../charts/open5gs-core.json");
const MONITORING_CHART: &str = include_str!("../../../charts/monitoring.json");

impl Chart {
    pub fn empty(name: &str) -> Self {
        Chart {
            name: name.to_string(),
            workloads: Vec::new(),
            services: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ClusterError> {
        serde_json::from_str(text).map_err(|e| ClusterError::ChartFormat(e.to_string()))
    }

    pub fn from_yaml(text: &str) -> Result<Self, ClusterError> {
        serde_yaml::from_str(text).map_err(|e| ClusterError::ChartFormat(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClusterError::ChartFormat(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("yaml") | Some("yml") => Chart::from_yaml(&text),
            _ => Chart::from_json(&text),
        }
    }

    /// The 5GC chart: every NF on the core node plus a second UPF on the edge.
    pub fn open5gs_core() -> Self {
        Chart::from_json(CORE_CHART).expect("bundled core chart is valid")
    }

    pub fn monitoring() -> Self {
        Chart::from_json(MONITORING_CHART).expect("bundled monitoring chart is valid")
    }

    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "open5gs-core" => Some(Chart::open5gs_core()),
            "monitoring" => Some(Chart::monitoring()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeploymentState {
    Installed,
    Terminating,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentHandle {
    pub chart: String,
    pub instances: Vec<InstanceId>,
    pub state: DeploymentState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceExposure {
    pub name: String,
    pub instance: InstanceId,
    pub address: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpuTransient {
    pub node: NodeName,
    pub start: SimTime,
    pub duration_ticks: u64,
    pub height: f64,
}

impl CpuTransient {
    pub fn active_at(&self, t: SimTime) -> bool {
        t >= self.start && t.ticks() < self.start.ticks() + self.duration_ticks
    }
}

/// A workload placed on a node.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadInstance {
    pub id: InstanceId,
    pub nf_type: NfType,
    pub node: NodeName,
    pub cpu_base: f64,
    pub locality: Option<Locality>,
    pub chart: String,
    pub pod_address: String,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: NodeName,
    pub address: String,
    pub cpu_base: f64,
    pub tx_bytes_total: u64,
    pub rx_bytes_total: u64,
    pub hosted: BTreeSet<InstanceId>,
    tick_tx: u64,
    tick_rx: u64,
    last_tick_tx: u64,
    last_tick_rx: u64,
    pod_seq: u32,
}

impl Node {
    fn new(name: NodeName, cpu_base: f64) -> Self {
        Node {
            name,
            address: name.default_address(),
            cpu_base,
            tx_bytes_total: 0,
            rx_bytes_total: 0,
            hosted: BTreeSet::new(),
            tick_tx: 0,
            tick_rx: 0,
            last_tick_tx: 0,
            last_tick_rx: 0,
            pod_seq: 0,
        }
    }

    /// Bytes moved through the node in the last completed tick, as Gbit/s.
    pub fn forwarded_gbps(&self) -> f64 {
        let bits = (self.last_tick_tx + self.last_tick_rx) as f64 * 8.0;
        bits * TICKS_PER_SECOND as f64 / 1e9
    }
}

/// Point-in-time view of one node, as read by its exporter.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSnapshot {
    pub name: NodeName,
    pub cpu_utilization: f64,
    pub memory_bytes: f64,
    pub tx_bytes_total: u64,
    pub rx_bytes_total: u64,
    pub nf_counts: BTreeMap<NfType, usize>,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    params: ClusterParams,
    nodes: BTreeMap<NodeName, Node>,
    instances: BTreeMap<InstanceId, WorkloadInstance>,
    deployments: BTreeMap<String, DeploymentHandle>,
    services: Vec<ServiceExposure>,
    transients: Vec<CpuTransient>,
    nf_seen: BTreeMap<NodeName, BTreeSet<NfType>>,
    next_instance: u32,
}

impl Default for Cluster {
    fn default() -> Self {
        Cluster::new(ClusterParams::default())
    }
}

impl Cluster {
    pub fn new(params: ClusterParams) -> Self {
        let nodes = NodeName::ALL
            .into_iter()
            .map(|n| (n, Node::new(n, params.node_cpu_base)))
            .collect();
        Cluster {
            params,
            nodes,
            instances: BTreeMap::new(),
            deployments: BTreeMap::new(),
            services: Vec::new(),
            transients: Vec::new(),
            nf_seen: BTreeMap::new(),
            next_instance: 0,
        }
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    pub fn node(&self, name: NodeName) -> &Node {
        &self.nodes[&name]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn master_address(&self) -> &str {
        &self.nodes[&NodeName::Master].address
    }

    pub fn instance(&self, id: InstanceId) -> Option<&WorkloadInstance> {
        self.instances.get(&id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &WorkloadInstance> {
        self.instances.values()
    }

    pub fn deployment(&self, chart: &str) -> Option<&DeploymentHandle> {
        self.deployments.get(chart)
    }

    /// Whether a workload of `nf_type` is currently placed on `node`.
    pub fn hosts(&self, node: NodeName, nf_type: NfType) -> bool {
        self.nodes[&node]
            .hosted
            .iter()
            .any(|id| self.instances[id].nf_type == nf_type)
    }

    fn schedule_transient(&mut self, node: NodeName, now: SimTime) {
        let duration_ticks =
            (self.params.transient_duration_s * TICKS_PER_SECOND as f64).round() as u64;
        self.transients.push(CpuTransient {
            node,
            start: now,
            duration_ticks,
            height: self.params.transient_height,
        });
    }

    /// Places every workload of `chart` and exposes its services. NRF
    /// registration is left to the caller, which owns the core network.
    pub fn install_chart(
        &mut self,
        chart: &Chart,
        now: SimTime,
    ) -> Result<DeploymentHandle, ClusterError> {
        if self
            .deployments
            .get(&chart.name)
            .is_some_and(|d| d.state != DeploymentState::Removed)
        {
            return Err(ClusterError::DuplicateChart(chart.name.clone()));
        }
        let placements = chart
            .workloads
            .iter()
            .map(|w| w.node.parse::<NodeName>().map(|n| (w, n)))
            .collect::<Result<Vec<_>, _>>()?;
        for spec in &chart.services {
            if !chart.workloads.iter().any(|w| w.nf_type == spec.nf_type) {
                return Err(ClusterError::ChartFormat(format!(
                    "service {} targets {} which the chart does not deploy",
                    spec.name, spec.nf_type
                )));
            }
            self.check_port(&spec.name, spec.port)?;
        }

        let mut ids = Vec::with_capacity(placements.len());
        let mut touched = BTreeSet::new();
        for (workload, node_name) in placements {
            let id = InstanceId(self.next_instance);
            self.next_instance += 1;
            let node = self.nodes.get_mut(&node_name).expect("all nodes exist");
            node.pod_seq += 1;
            let pod_address = format!("10.244.{}.{}", node_name.index(), node.pod_seq);
            node.hosted.insert(id);
            let locality = match workload.nf_type {
                NfType::Upf => Some(workload.locality.unwrap_or(match node_name {
                    NodeName::Edge => Locality::Edge,
                    _ => Locality::Core,
                })),
                _ => None,
            };
            self.instances.insert(
                id,
                WorkloadInstance {
                    id,
                    nf_type: workload.nf_type,
                    node: node_name,
                    cpu_base: workload.cpu_base.unwrap_or(0.0),
                    locality,
                    chart: chart.name.clone(),
                    pod_address,
                },
            );
            self.nf_seen
                .entry(node_name)
                .or_default()
                .insert(workload.nf_type);
            touched.insert(node_name);
            ids.push(id);
        }
        for node in touched {
            self.schedule_transient(node, now);
        }
        for spec in &chart.services {
            let backing = ids
                .iter()
                .copied()
                .find(|id| self.instances[id].nf_type == spec.nf_type)
                .expect("checked above");
            self.expose_service(&spec.name, backing, spec.port)?;
        }
        let handle = DeploymentHandle {
            chart: chart.name.clone(),
            instances: ids,
            state: DeploymentState::Installed,
        };
        self.deployments.insert(chart.name.clone(), handle.clone());
        Ok(handle)
    }

    /// Removes the deployment's instances. Returns the removed workloads so
    /// the caller can deregister them and release anchored sessions.
    pub fn uninstall_chart(
        &mut self,
        chart: &str,
        now: SimTime,
    ) -> Result<Vec<WorkloadInstance>, ClusterError> {
        let deployment = self
            .deployments
            .get_mut(chart)
            .ok_or_else(|| ClusterError::NoSuchChart(chart.to_string()))?;
        if deployment.state != DeploymentState::Installed {
            return Err(ClusterError::AlreadyRemoved(chart.to_string()));
        }
        deployment.state = DeploymentState::Terminating;
        let ids = deployment.instances.clone();
        let mut removed = Vec::with_capacity(ids.len());
        let mut touched = BTreeSet::new();
        for id in ids {
            if let Some(inst) = self.instances.remove(&id) {
                if let Some(node) = self.nodes.get_mut(&inst.node) {
                    node.hosted.remove(&id);
                }
                touched.insert(inst.node);
                removed.push(inst);
            }
        }
        for node in touched {
            self.schedule_transient(node, now);
        }
        if let Some(d) = self.deployments.get_mut(chart) {
            d.state = DeploymentState::Removed;
        }
        Ok(removed)
    }

    fn check_port(&self, name: &str, port: u16) -> Result<(), ClusterError> {
        let taken = self.services.iter().any(|s| {
            s.port == port && (s.name != name || self.instances.contains_key(&s.instance))
        });
        if taken {
            Err(ClusterError::PortInUse(port))
        } else {
            Ok(())
        }
    }

    /// Exposes `instance` at the master node address. A dangling exposure
    /// with the same name is replaced.
    pub fn expose_service(
        &mut self,
        name: &str,
        instance: InstanceId,
        port: u16,
    ) -> Result<ServiceExposure, ClusterError> {
        if !self.instances.contains_key(&instance) {
            return Err(ClusterError::NoSuchInstance(instance));
        }
        self.check_port(name, port)?;
        self.services.retain(|s| s.name != name);
        let exposure = ServiceExposure {
            name: name.to_string(),
            instance,
            address: self.master_address().to_string(),
            port,
        };
        self.services.push(exposure.clone());
        Ok(exposure)
    }

    pub fn services(&self) -> &[ServiceExposure] {
        &self.services
    }

    fn live_backing(&self, exposure: &ServiceExposure) -> Result<InstanceId, ClusterError> {
        if self.instances.contains_key(&exposure.instance) {
            Ok(exposure.instance)
        } else {
            Err(ClusterError::ServiceUnavailable(exposure.name.clone()))
        }
    }

    pub fn resolve_service(&self, name: &str) -> Result<InstanceId, ClusterError> {
        let exposure = self
            .services
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| ClusterError::NoSuchService(name.to_string()))?;
        self.live_backing(exposure)
    }

    pub fn resolve_address(&self, address: &str, port: u16) -> Result<InstanceId, ClusterError> {
        let exposure = self
            .services
            .iter()
            .find(|s| s.address == address && s.port == port)
            .ok_or_else(|| ClusterError::NoSuchService(format!("{address}:{port}")))?;
        self.live_backing(exposure)
    }

    pub fn account_traffic(&mut self, node: NodeName, tx_bytes: u64, rx_bytes: u64) {
        let node = self.nodes.get_mut(&node).expect("all nodes exist");
        node.tx_bytes_total += tx_bytes;
        node.rx_bytes_total += rx_bytes;
        node.tick_tx += tx_bytes;
        node.tick_rx += rx_bytes;
    }

    /// Closes the current tick's forwarded-rate window.
    pub fn end_tick(&mut self) {
        for node in self.nodes.values_mut() {
            node.last_tick_tx = std::mem::take(&mut node.tick_tx);
            node.last_tick_rx = std::mem::take(&mut node.tick_rx);
        }
    }

    pub fn node_cpu_util(&self, name: NodeName, t: SimTime) -> f64 {
        let node = &self.nodes[&name];
        let workloads: f64 = node
            .hosted
            .iter()
            .map(|id| self.instances[id].cpu_base)
            .sum();
        let transients: f64 = self
            .transients
            .iter()
            .filter(|tr| tr.node == name && tr.active_at(t))
            .map(|tr| tr.height)
            .sum();
        let load = self.params.cpu_per_gbps * node.forwarded_gbps();
        (node.cpu_base + workloads + transients + load).clamp(0.0, 1.0)
    }

    pub fn node_memory_bytes(&self, name: NodeName) -> f64 {
        let hosted = self.nodes[&name].hosted.len() as f64;
        self.params.memory_base_bytes + hosted * self.params.memory_per_instance_bytes
    }

    pub fn snapshot(&self, name: NodeName, t: SimTime) -> NodeSnapshot {
        let node = &self.nodes[&name];
        let mut nf_counts: BTreeMap<NfType, usize> = self
            .nf_seen
            .get(&name)
            .map(|seen| seen.iter().map(|nf| (*nf, 0)).collect())
            .unwrap_or_default();
        for id in &node.hosted {
            *nf_counts.entry(self.instances[id].nf_type).or_default() += 1;
        }
        NodeSnapshot {
            name,
            cpu_utilization: self.node_cpu_util(name, t),
            memory_bytes: self.node_memory_bytes(name),
            tx_bytes_total: node.tx_bytes_total,
            rx_bytes_total: node.rx_bytes_total,
            nf_counts,
        }
    }
}
