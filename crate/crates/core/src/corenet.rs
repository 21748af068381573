//! 5G core control and user plane: NRF registry, an in-simulator SBI bus,
//! AMF UE registration, SMF session management with UPF (re-)selection and
//! UPF anchors with per-locality address pools.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, NodeName};
use crate::kernel::SimTime;

pub type UeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "nf-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NfType {
    #[serde(rename = "NRF")]
    Nrf,
    #[serde(rename = "AMF")]
    Amf,
    #[serde(rename = "SMF")]
    Smf,
    #[serde(rename = "UPF")]
    Upf,
    #[serde(rename = "UDM")]
    Udm,
    #[serde(rename = "AUSF")]
    Ausf,
    #[serde(rename = "PCF")]
    Pcf,
    #[serde(rename = "UDR")]
    Udr,
    #[serde(rename = "BSF")]
    Bsf,
    #[serde(rename = "NSSF")]
    Nssf,
    #[serde(rename = "SCP")]
    Scp,
    #[serde(rename = "SAMPLER")]
    Sampler,
    #[serde(rename = "IPERF-SERVER")]
    IperfServer,
}

impl NfType {
    pub const ALL: [NfType; 13] = [
        NfType::Nrf,
        NfType::Amf,
        NfType::Smf,
        NfType::Upf,
        NfType::Udm,
        NfType::Ausf,
        NfType::Pcf,
        NfType::Udr,
        NfType::Bsf,
        NfType::Nssf,
        NfType::Scp,
        NfType::Sampler,
        NfType::IperfServer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NfType::Nrf => "NRF",
            NfType::Amf => "AMF",
            NfType::Smf => "SMF",
            NfType::Upf => "UPF",
            NfType::Udm => "UDM",
            NfType::Ausf => "AUSF",
            NfType::Pcf => "PCF",
            NfType::Udr => "UDR",
            NfType::Bsf => "BSF",
            NfType::Nssf => "NSSF",
            NfType::Scp => "SCP",
            NfType::Sampler => "SAMPLER",
            NfType::IperfServer => "IPERF-SERVER",
        }
    }

    /// 5GC functions register with the NRF; monitoring and traffic
    /// workloads do not.
    pub fn is_core_nf(self) -> bool {
        !matches!(self, NfType::Sampler | NfType::IperfServer)
    }
}

impl fmt::Display for NfType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Core,
    Edge,
}

impl Locality {
    pub fn as_str(self) -> &'static str {
        match self {
            Locality::Core => "core",
            Locality::Edge => "edge",
        }
    }

    /// The /16 a UPF of this locality allocates UE addresses from.
    pub fn pool_prefix(self) -> [u8; 2] {
        match self {
            Locality::Core => [10, 45],
            Locality::Edge => [10, 46],
        }
    }

    pub fn pool_contains(self, ip: Ipv4Addr) -> bool {
        ip.octets()[..2] == self.pool_prefix()
    }
}

impl fmt::Display for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Locality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "core" => Ok(Locality::Core),
            "edge" | "mec" => Ok(Locality::Edge),
            other => Err(format!("unknown locality {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Downlink,
    Uplink,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CoreError {
    #[error("{0} is already registered")]
    DuplicateRegistration(InstanceId),
    #[error("no AMF is registered")]
    NoAmf,
    #[error("no SMF is registered")]
    NoSmf,
    #[error("no {0} UPF is registered")]
    NoUpf(Locality),
    #[error("UE {0} is already registered")]
    AlreadyRegistered(UeId),
    #[error("UE {0} is not registered")]
    NotRegistered(UeId),
    #[error("UE {0} already has an active session")]
    SessionExists(UeId),
    #[error("UE {0} has no active session")]
    NoSuchSession(UeId),
    #[error("UE {0} still has active flows")]
    FlowsStillActive(UeId),
    #[error("session {0:?} was released")]
    SessionReleased(SessionId),
    #[error("UPF {0} serving the session is gone")]
    UpfGone(InstanceId),
    #[error("address pool {0} is exhausted")]
    PoolExhausted(Locality),
    #[error("SBI peer {0} is not registered")]
    SbiUnreachable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NfStatus {
    Registered,
    Deregistered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfInstance {
    pub id: InstanceId,
    pub nf_type: NfType,
    pub node: NodeName,
    pub sbi_address: String,
    pub status: NfStatus,
}

/// Registry of NF profiles. Discovery returns registered instances in
/// registration order.
#[derive(Debug, Clone, Default)]
pub struct Nrf {
    profiles: Vec<NfInstance>,
    localities: BTreeMap<InstanceId, Locality>,
}

impl Nrf {
    pub fn register(
        &mut self,
        mut instance: NfInstance,
        locality: Option<Locality>,
    ) -> Result<(), CoreError> {
        if self.is_registered(instance.id) {
            return Err(CoreError::DuplicateRegistration(instance.id));
        }
        self.profiles.retain(|p| p.id != instance.id);
        instance.status = NfStatus::Registered;
        if let Some(loc) = locality {
            self.localities.insert(instance.id, loc);
        }
        self.profiles.push(instance);
        Ok(())
    }

    pub fn deregister(&mut self, id: InstanceId) -> bool {
        match self
            .profiles
            .iter_mut()
            .find(|p| p.id == id && p.status == NfStatus::Registered)
        {
            Some(p) => {
                p.status = NfStatus::Deregistered;
                true
            }
            None => false,
        }
    }

    pub fn is_registered(&self, id: InstanceId) -> bool {
        self.profiles
            .iter()
            .any(|p| p.id == id && p.status == NfStatus::Registered)
    }

    pub fn locality(&self, id: InstanceId) -> Option<Locality> {
        self.localities.get(&id).copied()
    }

    pub fn discover(&self, nf_type: NfType, locality: Option<Locality>) -> Vec<&NfInstance> {
        self.profiles
            .iter()
            .filter(|p| p.status == NfStatus::Registered && p.nf_type == nf_type)
            .filter(|p| locality.is_none() || self.locality(p.id) == locality)
            .collect()
    }

    pub fn profile(&self, id: InstanceId) -> Option<&NfInstance> {
        self.profiles.iter().find(|p| p.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verb {
    #[serde(rename = "GET")]
    Get,
    #[serde(rename = "POST")]
    Post,
    #[serde(rename = "DELETE")]
    Delete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbiMessage {
    pub correlation_id: u64,
    pub requester: InstanceId,
    pub target: InstanceId,
    pub verb: Verb,
    pub path: String,
    pub body: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbiExchange {
    pub request: SbiMessage,
    pub status: u16,
}

/// Request/response bus between registered NFs. No bytes hit a wire; the
/// log keeps each request paired with its response status.
#[derive(Debug, Clone, Default)]
pub struct SbiBus {
    next_correlation: u64,
    log: Vec<SbiExchange>,
}

impl SbiBus {
    /// Routes a request from `requester` to the first registered instance
    /// of `target`. Returns the correlation id and the chosen peer.
    pub fn request(
        &mut self,
        nrf: &Nrf,
        requester: InstanceId,
        target: NfType,
        verb: Verb,
        path: &str,
        body: serde_json::Value,
    ) -> Result<(u64, InstanceId), CoreError> {
        if !nrf.is_registered(requester) {
            return Err(CoreError::SbiUnreachable(requester.to_string()));
        }
        let peer = nrf
            .discover(target, None)
            .first()
            .map(|p| p.id)
            .ok_or_else(|| CoreError::SbiUnreachable(target.to_string()))?;
        let correlation_id = self.next_correlation;
        self.next_correlation += 1;
        self.log.push(SbiExchange {
            request: SbiMessage {
                correlation_id,
                requester,
                target: peer,
                verb,
                path: path.to_string(),
                body,
            },
            status: 0,
        });
        Ok((correlation_id, peer))
    }

    pub fn respond(&mut self, correlation_id: u64, status: u16) {
        if let Some(ex) = self
            .log
            .iter_mut()
            .rev()
            .find(|ex| ex.request.correlation_id == correlation_id)
        {
            ex.status = status;
        }
    }

    pub fn log(&self) -> &[SbiExchange] {
        &self.log
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Active,
    Released,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PduSession {
    pub id: SessionId,
    pub ue: UeId,
    pub upf: InstanceId,
    pub locality: Locality,
    pub ue_ip: Ipv4Addr,
    pub state: SessionState,
    pub established_at: SimTime,
    pub released_at: Option<SimTime>,
}

/// Sequential allocator for one locality's /16. Addresses are never handed
/// out twice in a run.
#[derive(Debug, Clone)]
pub struct IpPool {
    pub locality: Locality,
    next_host: u32,
}

impl IpPool {
    pub fn new(locality: Locality) -> Self {
        IpPool {
            locality,
            next_host: 2,
        }
    }

    pub fn allocate(&mut self) -> Result<Ipv4Addr, CoreError> {
        if self.next_host >= 0xFFFF {
            return Err(CoreError::PoolExhausted(self.locality));
        }
        let [a, b] = self.locality.pool_prefix();
        let host = self.next_host;
        self.next_host += 1;
        Ok(Ipv4Addr::new(a, b, (host >> 8) as u8, (host & 0xFF) as u8))
    }
}

#[derive(Debug, Clone)]
pub struct UpfState {
    pub instance: InstanceId,
    pub node: NodeName,
    pub locality: Locality,
    pub anchored: BTreeSet<SessionId>,
    pub forwarded_bytes: u64,
    pub installed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeRegistration {
    pub ue: UeId,
    pub amf: InstanceId,
    pub registered_at: SimTime,
}

#[derive(Debug, Clone, Default)]
pub struct CoreNetwork {
    pub nrf: Nrf,
    pub sbi: SbiBus,
    registrations: BTreeMap<UeId, UeRegistration>,
    sessions: Vec<PduSession>,
    upfs: BTreeMap<InstanceId, UpfState>,
    pools: BTreeMap<Locality, IpPool>,
}

impl CoreNetwork {
    pub fn new() -> Self {
        CoreNetwork::default()
    }

    /// Registers a deployed NF and, for UPFs, brings up its anchor state.
    pub fn nrf_register(
        &mut self,
        instance: NfInstance,
        locality: Option<Locality>,
    ) -> Result<(), CoreError> {
        let (id, nf_type, node) = (instance.id, instance.nf_type, instance.node);
        self.nrf.register(instance, locality)?;
        if nf_type == NfType::Upf {
            let locality = locality.unwrap_or(Locality::Core);
            self.upfs.insert(
                id,
                UpfState {
                    instance: id,
                    node,
                    locality,
                    anchored: BTreeSet::new(),
                    forwarded_bytes: 0,
                    installed: true,
                },
            );
        }
        Ok(())
    }

    /// Deregisters an NF that is going away. Sessions anchored on a removed
    /// UPF are released; removing the last AMF drops UE registrations.
    /// Returns the released session ids.
    pub fn nrf_deregister(&mut self, id: InstanceId, now: SimTime) -> Vec<SessionId> {
        if !self.nrf.deregister(id) {
            return Vec::new();
        }
        let mut released = Vec::new();
        if let Some(upf) = self.upfs.get_mut(&id) {
            upf.installed = false;
            let anchored: Vec<_> = upf.anchored.iter().copied().collect();
            for sid in anchored {
                if self.release_session(sid, now) {
                    released.push(sid);
                }
            }
        }
        if self.nrf.discover(NfType::Amf, None).is_empty() {
            self.registrations.clear();
        }
        released
    }

    pub fn nrf_discover(&self, nf_type: NfType, locality: Option<Locality>) -> Vec<&NfInstance> {
        self.nrf.discover(nf_type, locality)
    }

    pub fn registration(&self, ue: UeId) -> Option<&UeRegistration> {
        self.registrations.get(&ue)
    }

    pub fn sessions(&self) -> &[PduSession] {
        &self.sessions
    }

    pub fn session(&self, id: SessionId) -> Option<&PduSession> {
        self.sessions.get(id.0 as usize)
    }

    pub fn active_session(&self, ue: UeId) -> Option<&PduSession> {
        self.sessions
            .iter()
            .rev()
            .find(|s| s.ue == ue && s.state == SessionState::Active)
    }

    pub fn upf(&self, id: InstanceId) -> Option<&UpfState> {
        self.upfs.get(&id)
    }

    pub fn upfs(&self) -> impl Iterator<Item = &UpfState> {
        self.upfs.values()
    }

    /// Creates the UE context at the AMF and establishes the default
    /// session on the core UPF via the SMF.
    pub fn amf_register_ue(
        &mut self,
        ue: UeId,
        now: SimTime,
    ) -> Result<(UeRegistration, PduSession), CoreError> {
        let amf = self
            .nrf
            .discover(NfType::Amf, None)
            .first()
            .map(|p| p.id)
            .ok_or(CoreError::NoAmf)?;
        if self.registrations.contains_key(&ue) {
            return Err(CoreError::AlreadyRegistered(ue));
        }
        if self.nrf.discover(NfType::Smf, None).is_empty() {
            return Err(CoreError::NoSmf);
        }
        let registration = UeRegistration {
            ue,
            amf,
            registered_at: now,
        };
        self.registrations.insert(ue, registration.clone());
        let (corr, _) = self.sbi.request(
            &self.nrf,
            amf,
            NfType::Smf,
            Verb::Post,
            "/nsmf-pdusession/v1/sm-contexts",
            serde_json::json!({ "supi": ue, "dnn": "internet" }),
        )?;
        match self.smf_establish_session(ue, Locality::Core, now) {
            Ok(session) => {
                self.sbi.respond(corr, 201);
                Ok((registration, session))
            }
            Err(e) => {
                self.sbi.respond(corr, 500);
                self.registrations.remove(&ue);
                Err(e)
            }
        }
    }

    pub fn smf_establish_session(
        &mut self,
        ue: UeId,
        selector: Locality,
        now: SimTime,
    ) -> Result<PduSession, CoreError> {
        if !self.registrations.contains_key(&ue) {
            return Err(CoreError::NotRegistered(ue));
        }
        if self.active_session(ue).is_some() {
            return Err(CoreError::SessionExists(ue));
        }
        let upf = self.select_upf(selector)?;
        let ue_ip = self
            .pools
            .entry(selector)
            .or_insert_with(|| IpPool::new(selector))
            .allocate()?;
        let id = SessionId(self.sessions.len() as u32);
        let session = PduSession {
            id,
            ue,
            upf,
            locality: selector,
            ue_ip,
            state: SessionState::Active,
            established_at: now,
            released_at: None,
        };
        self.upfs
            .get_mut(&upf)
            .expect("selected UPF has state")
            .anchored
            .insert(id);
        self.sessions.push(session.clone());
        Ok(session)
    }

    fn select_upf(&self, locality: Locality) -> Result<InstanceId, CoreError> {
        self.nrf
            .discover(NfType::Upf, Some(locality))
            .iter()
            .map(|p| p.id)
            .find(|id| self.upfs.get(id).is_some_and(|u| u.installed))
            .ok_or(CoreError::NoUpf(locality))
    }

    fn release_session(&mut self, id: SessionId, now: SimTime) -> bool {
        let Some(session) = self.sessions.get_mut(id.0 as usize) else {
            return false;
        };
        if session.state == SessionState::Released {
            return false;
        }
        session.state = SessionState::Released;
        session.released_at = Some(now);
        if let Some(upf) = self.upfs.get_mut(&session.upf) {
            upf.anchored.remove(&id);
        }
        true
    }

    /// Moves the UE's anchor to a UPF of `target` locality: the old session
    /// is released and a fresh one established with a new address.
    pub fn smf_reassign_upf(
        &mut self,
        ue: UeId,
        target: Locality,
        flows_active: bool,
        now: SimTime,
    ) -> Result<PduSession, CoreError> {
        let current = self
            .active_session(ue)
            .map(|s| s.id)
            .ok_or(CoreError::NoSuchSession(ue))?;
        if flows_active {
            return Err(CoreError::FlowsStillActive(ue));
        }
        self.select_upf(target)?;
        self.release_session(current, now);
        self.smf_establish_session(ue, target, now)
    }

    /// Forwards user-plane bytes through the session's anchor. The hosting
    /// node's tx (downlink) or rx (uplink) counter absorbs them.
    pub fn upf_forward(
        &mut self,
        session: SessionId,
        bytes: u64,
        direction: Direction,
        cluster: &mut Cluster,
    ) -> Result<u64, CoreError> {
        let s = self
            .sessions
            .get(session.0 as usize)
            .ok_or(CoreError::SessionReleased(session))?;
        if s.state != SessionState::Active {
            return Err(CoreError::SessionReleased(session));
        }
        let upf = self
            .upfs
            .get_mut(&s.upf)
            .filter(|u| u.installed)
            .ok_or(CoreError::UpfGone(s.upf))?;
        upf.forwarded_bytes += bytes;
        match direction {
            Direction::Downlink => cluster.account_traffic(upf.node, bytes, 0),
            Direction::Uplink => cluster.account_traffic(upf.node, 0, bytes),
        }
        Ok(bytes)
    }

    /// Checks the session invariants; returns a description of the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut active_per_ue: BTreeMap<UeId, usize> = BTreeMap::new();
        let mut seen_ips = BTreeSet::new();
        for s in &self.sessions {
            if !seen_ips.insert(s.ue_ip) {
                return Err(format!("address {} allocated twice", s.ue_ip));
            }
            let upf = self
                .upfs
                .get(&s.upf)
                .ok_or_else(|| format!("session {:?} has unknown UPF", s.id))?;
            if !upf.locality.pool_contains(s.ue_ip) {
                return Err(format!("{} outside the {} pool", s.ue_ip, upf.locality));
            }
            if s.state == SessionState::Active {
                *active_per_ue.entry(s.ue).or_default() += 1;
                if !upf.anchored.contains(&s.id) {
                    return Err(format!("active session {:?} not anchored", s.id));
                }
            }
        }
        match active_per_ue.iter().find(|(_, n)| **n > 1) {
            Some((ue, n)) => Err(format!("UE {ue} has {n} active sessions")),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Chart;

    fn t(s: u64) -> SimTime {
        SimTime::from_secs_whole(s)
    }

    fn instance(id: u32, nf_type: NfType, node: NodeName) -> NfInstance {
        NfInstance {
            id: InstanceId(id),
            nf_type,
            node,
            sbi_address: format!("10.244.0.{id}:7777"),
            status: NfStatus::Registered,
        }
    }

    /// Core with NRF, AMF, SMF and one UPF per locality.
    fn minimal_core() -> CoreNetwork {
        let mut core = CoreNetwork::new();
        core.nrf_register(instance(0, NfType::Nrf, NodeName::Core), None)
            .unwrap();
        core.nrf_register(instance(1, NfType::Amf, NodeName::Core), None)
            .unwrap();
        core.nrf_register(instance(2, NfType::Smf, NodeName::Core), None)
            .unwrap();
        core.nrf_register(
            instance(3, NfType::Upf, NodeName::Core),
            Some(Locality::Core),
        )
        .unwrap();
        core.nrf_register(
            instance(4, NfType::Upf, NodeName::Edge),
            Some(Locality::Edge),
        )
        .unwrap();
        core
    }

    #[test]
    fn register_discover_deregister() {
        let mut core = CoreNetwork::new();
        assert!(core.nrf_discover(NfType::Amf, None).is_empty());
        core.nrf_register(
            instance(7, NfType::Upf, NodeName::Edge),
            Some(Locality::Edge),
        )
        .unwrap();
        let found = core.nrf_discover(NfType::Upf, Some(Locality::Edge));
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].node, NodeName::Edge);
        assert!(core.nrf_discover(NfType::Upf, Some(Locality::Core)).is_empty());
        assert_eq!(
            core.nrf_register(instance(7, NfType::Upf, NodeName::Edge), None),
            Err(CoreError::DuplicateRegistration(InstanceId(7)))
        );
        core.nrf_deregister(InstanceId(7), t(1));
        assert!(core.nrf_discover(NfType::Upf, None).is_empty());
    }

    #[test]
    fn default_chart_has_two_upfs() {
        let mut cluster = Cluster::default();
        let mut core = CoreNetwork::new();
        let h = cluster
            .install_chart(&Chart::open5gs_core(), t(0))
            .unwrap();
        for id in h.instances {
            let w = cluster.instance(id).unwrap();
            if w.nf_type.is_core_nf() {
                core.nrf_register(
                    NfInstance {
                        id,
                        nf_type: w.nf_type,
                        node: w.node,
                        sbi_address: w.pod_address.clone(),
                        status: NfStatus::Registered,
                    },
                    w.locality,
                )
                .unwrap();
            }
        }
        assert_eq!(core.nrf_discover(NfType::Upf, None).len(), 2);
        assert_eq!(core.nrf_discover(NfType::Amf, None).len(), 1);
        let edge = core.nrf_discover(NfType::Upf, Some(Locality::Edge));
        assert_eq!(edge.len(), 1);
        assert_eq!(edge[0].node, NodeName::Edge);
    }

    #[test]
    fn sequential_addresses_per_pool() {
        let mut core = minimal_core();
        let (_, s1) = core.amf_register_ue(1, t(10)).unwrap();
        let (_, s2) = core.amf_register_ue(2, t(10)).unwrap();
        assert_eq!(s1.ue_ip, Ipv4Addr::new(10, 45, 0, 2));
        assert_eq!(s2.ue_ip, Ipv4Addr::new(10, 45, 0, 3));
        assert_eq!(s1.locality, Locality::Core);
        let s2b = core.smf_reassign_upf(2, Locality::Edge, false, t(90)).unwrap();
        assert_eq!(s2b.ue_ip, Ipv4Addr::new(10, 46, 0, 2));
        assert_eq!(
            core.session(s2.id).unwrap().state,
            SessionState::Released
        );
        assert_eq!(core.session(s2.id).unwrap().released_at, Some(t(90)));
        core.check_invariants().unwrap();
        assert_eq!(core.sbi.log().len(), 2);
        assert!(core.sbi.log().iter().all(|ex| ex.status == 201));
    }

    #[test]
    fn registration_errors() {
        let mut core = CoreNetwork::new();
        assert_eq!(core.amf_register_ue(1, t(0)).unwrap_err(), CoreError::NoAmf);
        let mut core = minimal_core();
        core.amf_register_ue(1, t(0)).unwrap();
        assert_eq!(
            core.amf_register_ue(1, t(0)).unwrap_err(),
            CoreError::AlreadyRegistered(1)
        );
        assert_eq!(
            core.smf_establish_session(1, Locality::Core, t(0)).unwrap_err(),
            CoreError::SessionExists(1)
        );
        assert_eq!(
            core.smf_establish_session(9, Locality::Core, t(0)).unwrap_err(),
            CoreError::NotRegistered(9)
        );
    }

    #[test]
    fn reassign_same_locality_and_errors() {
        let mut core = minimal_core();
        core.amf_register_ue(1, t(0)).unwrap();
        let s = core.smf_reassign_upf(1, Locality::Core, false, t(1)).unwrap();
        assert_eq!(s.ue_ip, Ipv4Addr::new(10, 45, 0, 3));
        assert_eq!(
            core.smf_reassign_upf(1, Locality::Edge, true, t(2)).unwrap_err(),
            CoreError::FlowsStillActive(1)
        );
        assert_eq!(
            core.smf_reassign_upf(5, Locality::Edge, false, t(2)).unwrap_err(),
            CoreError::NoSuchSession(5)
        );
        core.nrf_deregister(InstanceId(4), t(3));
        assert_eq!(
            core.smf_reassign_upf(1, Locality::Edge, false, t(3)).unwrap_err(),
            CoreError::NoUpf(Locality::Edge)
        );
        // The failed reassignment left the original session in place.
        assert_eq!(core.active_session(1).unwrap().id, s.id);
    }

    #[test]
    fn forwarding_accounts_on_anchor_node() {
        let mut cluster = Cluster::default();
        let mut core = minimal_core();
        let (_, s1) = core.amf_register_ue(1, t(0)).unwrap();
        let (_, s2) = core.amf_register_ue(2, t(0)).unwrap();
        core.upf_forward(s1.id, 12_500_000, Direction::Downlink, &mut cluster)
            .unwrap();
        assert_eq!(cluster.node(NodeName::Core).tx_bytes_total, 12_500_000);
        let s2b = core.smf_reassign_upf(2, Locality::Edge, false, t(1)).unwrap();
        assert_eq!(
            core.upf_forward(s2.id, 1, Direction::Downlink, &mut cluster),
            Err(CoreError::SessionReleased(s2.id))
        );
        core.upf_forward(s2b.id, 12_500_000, Direction::Downlink, &mut cluster)
            .unwrap();
        assert_eq!(cluster.node(NodeName::Edge).tx_bytes_total, 12_500_000);
        assert_eq!(cluster.node(NodeName::Core).tx_bytes_total, 12_500_000);
        core.upf_forward(s1.id, 10, Direction::Uplink, &mut cluster)
            .unwrap();
        assert_eq!(cluster.node(NodeName::Core).rx_bytes_total, 10);
        assert_eq!(core.upf(InstanceId(3)).unwrap().forwarded_bytes, 12_500_010);
    }

    #[test]
    fn removing_upf_releases_sessions_and_amf_drops_registrations() {
        let mut core = minimal_core();
        let (_, s1) = core.amf_register_ue(1, t(0)).unwrap();
        let released = core.nrf_deregister(InstanceId(3), t(5));
        assert_eq!(released, vec![s1.id]);
        assert!(core.active_session(1).is_none());
        core.nrf_deregister(InstanceId(1), t(5));
        assert!(core.registration(1).is_none());
        // Addresses are not reused after re-establishing.
        core.nrf_register(instance(1, NfType::Amf, NodeName::Core), None)
            .unwrap();
        core.nrf_register(
            instance(9, NfType::Upf, NodeName::Core),
            Some(Locality::Core),
        )
        .unwrap();
        let (_, again) = core.amf_register_ue(1, t(6)).unwrap();
        assert_eq!(again.ue_ip, Ipv4Addr::new(10, 45, 0, 3));
        core.check_invariants().unwrap();
    }

    #[test]
    fn sbi_requires_registered_requester() {
        let core = minimal_core();
        let mut bus = SbiBus::default();
        assert!(matches!(
            bus.request(
                &core.nrf,
                InstanceId(42),
                NfType::Smf,
                Verb::Get,
                "/",
                serde_json::Value::Null
            ),
            Err(CoreError::SbiUnreachable(_))
        ));
        let (corr, peer) = bus
            .request(
                &core.nrf,
                InstanceId(1),
                NfType::Smf,
                Verb::Get,
                "/",
                serde_json::Value::Null,
            )
            .unwrap();
        assert_eq!(peer, InstanceId(2));
        bus.respond(corr, 200);
        assert_eq!(bus.log()[0].status, 200);
    }
}
