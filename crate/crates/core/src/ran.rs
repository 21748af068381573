//! gNB and UE model: NGAP-lite association through the exposed AMF service,
//! the receiver-gain → SNR → CQI → MCS → capacity chain, a per-UE cell
//! scheduler and the JSON stats/control API.

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corenet::{Direction, InstanceId, UeId};
use crate::kernel::{SeededRng, SimTime, TICKS_PER_SECOND};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RanError {
    #[error("AMF service {0} is unreachable")]
    AmfUnreachable(String),
    #[error("gNB has no NGAP association")]
    NotConnected,
    #[error("UE {0} is already attached")]
    AlreadyAttached(UeId),
    #[error("UE {0} is not attached")]
    NotAttached(UeId),
    #[error("invalid gNB configuration: {0}")]
    InvalidConfig(String),
}

/// Link-adaptation lookup tables. CQI 1..15 thresholds and efficiencies;
/// the MCS map is indexed by CQI 0..15.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTables {
    pub snr_thresholds_db: [f64; 15],
    pub efficiency: [f64; 15],
    pub cqi_to_mcs: [u8; 16],
}

impl Default for LinkTables {
    fn default() -> Self {
        LinkTables {
            snr_thresholds_db: [
                -6.7, -4.7, -2.3, 0.2, 2.4, 4.3, 5.9, 8.1, 10.3, 11.7, 14.1, 16.3, 18.7, 21.0,
                22.7,
            ],
            efficiency: [
                0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141, 2.4063, 2.7305,
                3.3223, 3.9023, 4.5234, 5.1152, 5.5547,
            ],
            cqi_to_mcs: [0, 0, 2, 4, 6, 8, 11, 13, 15, 18, 20, 22, 24, 26, 27, 28],
        }
    }
}

impl LinkTables {
    /// Highest CQI whose threshold is at or below `snr_db`; 0 below all.
    pub fn cqi_for(&self, snr_db: f64) -> u8 {
        self.snr_thresholds_db
            .iter()
            .take_while(|th| **th <= snr_db)
            .count() as u8
    }

    pub fn mcs_for(&self, cqi: u8) -> u8 {
        self.cqi_to_mcs[cqi.min(15) as usize]
    }

    pub fn efficiency_for(&self, cqi: u8) -> f64 {
        match cqi {
            0 => 0.0,
            c => self.efficiency[(c.min(15) - 1) as usize],
        }
    }

    pub fn validate(&self) -> Result<(), RanError> {
        let sorted = |xs: &[f64]| xs.windows(2).all(|w| w[0] <= w[1]);
        if !sorted(&self.snr_thresholds_db) || !sorted(&self.efficiency) {
            return Err(RanError::InvalidConfig(
                "thresholds and efficiencies must be non-decreasing".into(),
            ));
        }
        if !self.cqi_to_mcs.windows(2).all(|w| w[0] <= w[1]) {
            return Err(RanError::InvalidConfig(
                "CQI to MCS map must be non-decreasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbConfig {
    pub cell_id: u32,
    /// `host:port` of the exposed AMF service.
    pub amf_address: String,
    pub bandwidth_hz: f64,
    pub overhead_factor: f64,
    pub rx_gain_offset_db: f64,
    pub snr_noise_std_db: f64,
    pub default_snr_ref_db: f64,
}

impl Default for GnbConfig {
    fn default() -> Self {
        GnbConfig {
            cell_id: 1,
            amf_address: "192.168.1.10:38412".into(),
            bandwidth_hz: 50e6,
            overhead_factor: 0.9,
            rx_gain_offset_db: 0.0,
            snr_noise_std_db: 0.0,
            default_snr_ref_db: 20.0,
        }
    }
}

impl GnbConfig {
    pub fn validate(&self) -> Result<(), RanError> {
        if !self.bandwidth_hz.is_finite() || self.bandwidth_hz <= 0.0 {
            return Err(RanError::InvalidConfig("bandwidth must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.overhead_factor) || self.overhead_factor == 0.0 {
            return Err(RanError::InvalidConfig(
                "overhead factor must lie in (0, 1]".into(),
            ));
        }
        if self.snr_noise_std_db < 0.0 {
            return Err(RanError::InvalidConfig("noise deviation is negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeContext {
    pub ue_id: UeId,
    pub snr_ref_db: f64,
    pub attached: bool,
    pub ue_ip: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioLinkState {
    pub snr_db: f64,
    pub cqi: u8,
    pub mcs: u8,
    pub capacity_bps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeStats {
    pub ue_id: UeId,
    pub cell_id: u32,
    pub dl_bitrate: f64,
    pub ul_bitrate: f64,
    pub mcs_dl: u8,
    pub mcs_ul: u8,
    pub cqi: u8,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgapAssociation {
    pub amf_address: String,
    pub amf: InstanceId,
}

/// Bytes per tick over the trailing one-second window.
#[derive(Debug, Clone, Default)]
struct RateMeter {
    dl: VecDeque<u64>,
    ul: VecDeque<u64>,
}

impl RateMeter {
    fn push(&mut self, dl: u64, ul: u64) {
        for (q, v) in [(&mut self.dl, dl), (&mut self.ul, ul)] {
            q.push_back(v);
            if q.len() > TICKS_PER_SECOND as usize {
                q.pop_front();
            }
        }
    }

    fn bitrates(&self) -> (f64, f64) {
        let bps = |q: &VecDeque<u64>| q.iter().sum::<u64>() as f64 * 8.0;
        (bps(&self.dl), bps(&self.ul))
    }
}

/// Offered load of one flow, as seen by the cell scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowDemand {
    pub ue: UeId,
    pub direction: Direction,
    pub offered_bps: u64,
}

#[derive(Debug, Clone)]
pub struct Gnb {
    pub config: GnbConfig,
    pub tables: LinkTables,
    association: Option<NgapAssociation>,
    ues: BTreeMap<UeId, UeContext>,
    links: BTreeMap<UeId, RadioLinkState>,
    meters: BTreeMap<UeId, RateMeter>,
}

impl Gnb {
    pub fn new(config: GnbConfig, tables: LinkTables) -> Result<Self, RanError> {
        config.validate()?;
        tables.validate()?;
        Ok(Gnb {
            config,
            tables,
            association: None,
            ues: BTreeMap::new(),
            links: BTreeMap::new(),
            meters: BTreeMap::new(),
        })
    }

    /// Brings up the association once the caller has resolved the AMF
    /// service to a live instance.
    pub fn connect(&mut self, amf_address: &str, amf: InstanceId) -> NgapAssociation {
        let assoc = NgapAssociation {
            amf_address: amf_address.to_string(),
            amf,
        };
        self.config.amf_address = amf_address.to_string();
        self.association = Some(assoc.clone());
        assoc
    }

    pub fn disconnect(&mut self) {
        self.association = None;
    }

    pub fn association(&self) -> Option<&NgapAssociation> {
        self.association.as_ref()
    }

    pub fn ue(&self, ue: UeId) -> Option<&UeContext> {
        self.ues.get(&ue)
    }

    pub fn attached_ues(&self) -> impl Iterator<Item = &UeContext> {
        self.ues.values().filter(|u| u.attached)
    }

    /// Records a UE as attached once the core has anchored its session.
    pub fn attach(
        &mut self,
        ue: UeId,
        ue_ip: Ipv4Addr,
        snr_ref_db: Option<f64>,
    ) -> Result<&UeContext, RanError> {
        if self.association.is_none() {
            return Err(RanError::NotConnected);
        }
        if self.ues.get(&ue).is_some_and(|u| u.attached) {
            return Err(RanError::AlreadyAttached(ue));
        }
        let ctx = UeContext {
            ue_id: ue,
            snr_ref_db: snr_ref_db.unwrap_or(self.config.default_snr_ref_db),
            attached: true,
            ue_ip: Some(ue_ip),
        };
        self.ues.insert(ue, ctx);
        self.meters.insert(ue, RateMeter::default());
        let link = self.link_without_noise(ue)?;
        self.links.insert(ue, link);
        Ok(&self.ues[&ue])
    }

    pub fn detach(&mut self, ue: UeId) {
        if let Some(ctx) = self.ues.get_mut(&ue) {
            ctx.attached = false;
            ctx.ue_ip = None;
        }
        self.links.remove(&ue);
        self.meters.remove(&ue);
    }

    pub fn set_ue_ip(&mut self, ue: UeId, ip: Ipv4Addr) {
        if let Some(ctx) = self.ues.get_mut(&ue) {
            ctx.ue_ip = Some(ip);
        }
    }

    pub fn set_rx_gain_offset(&mut self, offset_db: f64) {
        self.config.rx_gain_offset_db = offset_db;
    }

    fn state_for_snr(&self, snr_db: f64) -> RadioLinkState {
        let cqi = self.tables.cqi_for(snr_db);
        let capacity = self.tables.efficiency_for(cqi)
            * self.config.bandwidth_hz
            * self.config.overhead_factor;
        RadioLinkState {
            snr_db,
            cqi,
            mcs: self.tables.mcs_for(cqi),
            capacity_bps: capacity.round() as u64,
        }
    }

    fn link_without_noise(&self, ue: UeId) -> Result<RadioLinkState, RanError> {
        let ctx = self
            .ues
            .get(&ue)
            .filter(|u| u.attached)
            .ok_or(RanError::NotAttached(ue))?;
        Ok(self.state_for_snr(ctx.snr_ref_db + self.config.rx_gain_offset_db))
    }

    /// Evaluates the link chain for `ue`, drawing measurement noise from
    /// `rng` when a deviation is configured.
    pub fn compute_link(
        &self,
        ue: UeId,
        rng: &mut SeededRng,
    ) -> Result<RadioLinkState, RanError> {
        let clean = self.link_without_noise(ue)?;
        let noise = rng.gaussian(self.config.snr_noise_std_db);
        if noise == 0.0 {
            Ok(clean)
        } else {
            Ok(self.state_for_snr(clean.snr_db + noise))
        }
    }

    /// Recomputes and caches the link state of every attached UE for the
    /// current tick, in UE order.
    pub fn refresh_links(&mut self, rng: &mut SeededRng) {
        let ids: Vec<UeId> = self.attached_ues().map(|u| u.ue_id).collect();
        for ue in ids {
            if let Ok(link) = self.compute_link(ue, rng) {
                self.links.insert(ue, link);
            }
        }
    }

    pub fn link(&self, ue: UeId) -> Option<&RadioLinkState> {
        self.links.get(&ue)
    }

    /// Splits each UE's capacity per direction among its flows. A flow gets
    /// its offered rate when the UE's demand fits, and a demand-proportional
    /// share otherwise.
    pub fn schedule_cell(&self, flows: &[FlowDemand]) -> Vec<u64> {
        let mut demand: BTreeMap<(UeId, bool), u128> = BTreeMap::new();
        for f in flows {
            *demand
                .entry((f.ue, f.direction == Direction::Uplink))
                .or_default() += f.offered_bps as u128;
        }
        flows
            .iter()
            .map(|f| {
                let capacity = self.links.get(&f.ue).map_or(0, |l| l.capacity_bps) as u128;
                let total = demand[&(f.ue, f.direction == Direction::Uplink)];
                if total <= capacity {
                    f.offered_bps
                } else {
                    (capacity * f.offered_bps as u128 / total) as u64
                }
            })
            .collect()
    }

    /// Closes a tick's measurement window with the bytes delivered per UE
    /// as (downlink, uplink).
    pub fn end_tick(&mut self, delivered: &BTreeMap<UeId, (u64, u64)>) {
        for (ue, meter) in self.meters.iter_mut() {
            let (dl, ul) = delivered.get(ue).copied().unwrap_or((0, 0));
            meter.push(dl, ul);
        }
    }

    pub fn ran_stats(&self) -> Vec<UeStats> {
        self.attached_ues()
            .filter_map(|ctx| {
                let link = self.links.get(&ctx.ue_id)?;
                let (dl, ul) = self
                    .meters
                    .get(&ctx.ue_id)
                    .map(RateMeter::bitrates)
                    .unwrap_or((0.0, 0.0));
                Some(UeStats {
                    ue_id: ctx.ue_id,
                    cell_id: self.config.cell_id,
                    dl_bitrate: dl,
                    ul_bitrate: ul,
                    mcs_dl: link.mcs,
                    mcs_ul: link.mcs,
                    cqi: link.cqi,
                    snr: link.snr_db,
                })
            })
            .collect()
    }

    /// In-process request/response pair for the stats/control API.
    pub fn handle_api(&mut self, request: &str, now: SimTime) -> String {
        match parse_api_request(request) {
            ApiRequest::Stats { message_id } => {
                stats_response(&message_id, now, &self.ran_stats())
            }
            ApiRequest::ConfigSet {
                message_id,
                rx_gain_offset_db,
            } => {
                self.set_rx_gain_offset(rx_gain_offset_db);
                config_set_response(&message_id)
            }
            ApiRequest::Unknown { message_id } => unknown_response(&message_id),
            ApiRequest::Malformed { reason } => malformed_response(&reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiRequest {
    Stats { message_id: String },
    ConfigSet { message_id: String, rx_gain_offset_db: f64 },
    Unknown { message_id: String },
    Malformed { reason: String },
}

fn message_id_of(v: &Value) -> String {
    match v.get("message_id") {
        Some(Value::String(s)) => s.clone(),
        Some(other) if !other.is_null() => other.to_string(),
        _ => String::new(),
    }
}

pub fn parse_api_request(text: &str) -> ApiRequest {
    let v: Value = match serde_json::from_str(text) {
        Ok(v @ Value::Object(_)) => v,
        Ok(_) => {
            return ApiRequest::Malformed {
                reason: "request must be a JSON object".into(),
            }
        }
        Err(e) => {
            return ApiRequest::Malformed {
                reason: e.to_string(),
            }
        }
    };
    let message_id = message_id_of(&v);
    match v.get("message").and_then(Value::as_str) {
        Some("stats") => ApiRequest::Stats { message_id },
        Some("config_set") => match v.get("rx_gain_offset_db").and_then(Value::as_f64) {
            Some(offset) => ApiRequest::ConfigSet {
                message_id,
                rx_gain_offset_db: offset,
            },
            None => ApiRequest::Malformed {
                reason: "config_set needs a numeric rx_gain_offset_db".into(),
            },
        },
        _ => ApiRequest::Unknown { message_id },
    }
}

pub fn stats_response(message_id: &str, now: SimTime, stats: &[UeStats]) -> String {
    let ue_list: Vec<Value> = stats
        .iter()
        .map(|s| {
            json!({
                "ue_id": s.ue_id,
                "cell_id": s.cell_id,
                "dl_bitrate": s.dl_bitrate,
                "ul_bitrate": s.ul_bitrate,
                "mcs_dl": s.mcs_dl,
                "mcs_ul": s.mcs_ul,
                "cqi": s.cqi,
                "snr": s.snr,
            })
        })
        .collect();
    json!({
        "message": "stats",
        "message_id": message_id,
        "time": now.as_secs_f64(),
        "ue_list": ue_list,
    })
    .to_string()
}

pub fn config_set_response(message_id: &str) -> String {
    json!({ "message": "config_set", "message_id": message_id, "ok": true }).to_string()
}

pub fn unknown_response(message_id: &str) -> String {
    json!({ "error": "unknown_message", "message_id": message_id }).to_string()
}

pub fn malformed_response(reason: &str) -> String {
    json!({ "error": "bad_request", "message_id": Value::Null, "reason": reason }).to_string()
}

/// Decodes a `stats` response back into per-UE records.
pub fn parse_stats_response(text: &str) -> Result<(f64, Vec<UeStats>), String> {
    #[derive(Deserialize)]
    struct Resp {
        message: String,
        time: f64,
        ue_list: Vec<UeStats>,
    }
    let resp: Resp = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if resp.message != "stats" {
        return Err(format!("unexpected message {}", resp.message));
    }
    Ok((resp.time, resp.ue_list))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn connected_gnb() -> Gnb {
        let mut gnb = Gnb::new(GnbConfig::default(), LinkTables::default()).unwrap();
        gnb.connect("192.168.1.10:38412", InstanceId(2));
        gnb
    }

    #[test]
    fn link_chain_at_reference_snr() {
        let mut gnb = connected_gnb();
        gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), None).unwrap();
        let mut rng = SeededRng::new(0);
        let link = gnb.compute_link(1, &mut rng).unwrap();
        assert_eq!(link.snr_db, 20.0);
        assert_eq!(link.cqi, 13);
        assert_eq!(link.mcs, 26);
        assert_eq!(link.capacity_bps, 203_553_000);
        gnb.set_rx_gain_offset(-12.0);
        let link = gnb.compute_link(1, &mut rng).unwrap();
        assert_eq!(link.snr_db, 8.0);
        assert_eq!(link.cqi, 7);
        assert_eq!(link.mcs, 13);
        assert_eq!(link.capacity_bps, 66_447_000);
    }

    #[test]
    fn below_lowest_threshold_is_dead_link() {
        let mut gnb = connected_gnb();
        gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), Some(-10.0)).unwrap();
        let link = gnb.compute_link(1, &mut SeededRng::new(0)).unwrap();
        assert_eq!((link.cqi, link.mcs, link.capacity_bps), (0, 0, 0));
    }

    #[test]
    fn gain_offsets_shift_snr_exactly() {
        let mut gnb = connected_gnb();
        gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), None).unwrap();
        let mut rng = SeededRng::new(0);
        for (offset, expected) in [(0.0, 20.0), (-4.0, 16.0), (-8.0, 12.0), (-12.0, 8.0)] {
            gnb.set_rx_gain_offset(offset);
            assert_eq!(gnb.compute_link(1, &mut rng).unwrap().snr_db, expected);
        }
    }

    #[test]
    fn attach_errors() {
        let mut gnb = Gnb::new(GnbConfig::default(), LinkTables::default()).unwrap();
        assert_eq!(
            gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), None).unwrap_err(),
            RanError::NotConnected
        );
        gnb.connect("192.168.1.10:38412", InstanceId(2));
        gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), None).unwrap();
        assert_eq!(
            gnb.attach(1, Ipv4Addr::new(10, 45, 0, 3), None).unwrap_err(),
            RanError::AlreadyAttached(1)
        );
        assert_eq!(
            gnb.compute_link(7, &mut SeededRng::new(0)).unwrap_err(),
            RanError::NotAttached(7)
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            GnbConfig {
                bandwidth_hz: 0.0,
                ..GnbConfig::default()
            },
            GnbConfig {
                overhead_factor: 1.5,
                ..GnbConfig::default()
            },
            GnbConfig {
                overhead_factor: 0.0,
                ..GnbConfig::default()
            },
        ] {
            assert!(Gnb::new(cfg, LinkTables::default()).is_err());
        }
    }

    #[test]
    fn scheduler_min_rule() {
        let mut gnb = connected_gnb();
        gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), None).unwrap();
        gnb.attach(2, Ipv4Addr::new(10, 45, 0, 3), None).unwrap();
        let ul = FlowDemand {
            ue: 1,
            direction: Direction::Uplink,
            offered_bps: 120_000_000,
        };
        assert_eq!(gnb.schedule_cell(&[ul]), vec![120_000_000]);
        let dl = |ue| FlowDemand {
            ue,
            direction: Direction::Downlink,
            offered_bps: 100_000_000,
        };
        assert_eq!(
            gnb.schedule_cell(&[dl(1), dl(2)]),
            vec![100_000_000, 100_000_000]
        );
        gnb.set_rx_gain_offset(-12.0);
        gnb.refresh_links(&mut SeededRng::new(0));
        assert_eq!(gnb.schedule_cell(&[ul]), vec![66_447_000]);
        // Two flows on one UE share its capacity in proportion to demand.
        let split = gnb.schedule_cell(&[dl(1), dl(1)]);
        assert_eq!(split, vec![33_223_500, 33_223_500]);
    }

    #[test]
    fn stats_track_trailing_second() {
        let mut gnb = connected_gnb();
        assert!(gnb.ran_stats().is_empty());
        gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), None).unwrap();
        let delivered = BTreeMap::from([(1, (1_250_000, 0))]);
        for _ in 0..25 {
            gnb.end_tick(&delivered);
        }
        let stats = gnb.ran_stats();
        assert_eq!(stats[0].dl_bitrate, 100e6);
        assert_eq!(stats[0].ul_bitrate, 0.0);
        assert_eq!(stats[0].cqi, 13);
    }

    #[test]
    fn api_messages() {
        let mut gnb = connected_gnb();
        gnb.attach(1, Ipv4Addr::new(10, 45, 0, 2), None).unwrap();
        let resp: Value = serde_json::from_str(
            &gnb.handle_api(r#"{"message":"stats","message_id":"a1"}"#, SimTime(50)),
        )
        .unwrap();
        assert_eq!(resp["message_id"], "a1");
        assert_eq!(resp["time"], 5.0);
        assert_eq!(resp["ue_list"][0]["ue_id"], 1);
        assert_eq!(resp["ue_list"][0]["cell_id"], 1);
        assert_eq!(resp["ue_list"][0]["snr"], 20.0);

        let resp: Value = serde_json::from_str(&gnb.handle_api(
            r#"{"message":"config_set","message_id":"b","rx_gain_offset_db":-4}"#,
            SimTime(50),
        ))
        .unwrap();
        assert_eq!(resp, json!({"message":"config_set","message_id":"b","ok":true}));
        assert_eq!(gnb.config.rx_gain_offset_db, -4.0);

        let resp: Value = serde_json::from_str(
            &gnb.handle_api(r#"{"message":"reboot","message_id":"c"}"#, SimTime(50)),
        )
        .unwrap();
        assert_eq!(resp, json!({"error":"unknown_message","message_id":"c"}));
        assert!(gnb.handle_api("not json", SimTime(0)).contains("bad_request"));
    }

    #[test]
    fn stats_response_round_trip() {
        let stats = vec![UeStats {
            ue_id: 2,
            cell_id: 1,
            dl_bitrate: 1e8,
            ul_bitrate: 0.0,
            mcs_dl: 26,
            mcs_ul: 26,
            cqi: 13,
            snr: 20.0,
        }];
        let (time, back) = parse_stats_response(&stats_response("x", SimTime(12), &stats)).unwrap();
        assert_eq!(time, 1.2);
        assert_eq!(back, stats);
    }
}
