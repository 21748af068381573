//! Trajectory assertions for the two built-in experiments. Both checkers
//! are pure functions of a TSDB dump.

use serde::{Deserialize, Serialize};

use crate::monitoring::exporters::{
    NODE_CPU, NODE_TX, RAN_CQI, RAN_DL, RAN_MCS_UL, RAN_SNR, RAN_UL,
};
use crate::monitoring::{DumpSeries, TsdbDump};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub id: String,
    pub passed: bool,
    pub measured: String,
    pub bound: String,
}

impl AssertionResult {
    fn new(id: &str, passed: bool, measured: impl Into<String>, bound: impl Into<String>) -> Self {
        AssertionResult {
            id: id.to_string(),
            passed,
            measured: measured.into(),
            bound: bound.into(),
        }
    }

    fn no_data(id: &str, bound: impl Into<String>) -> Self {
        AssertionResult::new(id, false, "no samples", bound)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("dump has no {0} series")]
pub struct MissingSeries(pub String);

fn require(dump: &TsdbDump, names: &[&str]) -> Result<(), MissingSeries> {
    match names
        .iter()
        .find(|n| !dump.series.iter().any(|s| s.name == **n))
    {
        Some(n) => Err(MissingSeries(n.to_string())),
        None => Ok(()),
    }
}

fn find<'a>(dump: &'a TsdbDump, name: &str, label: (&str, &str)) -> Option<&'a DumpSeries> {
    dump.series
        .iter()
        .find(|s| s.name == name && s.labels.get(label.0).is_some_and(|v| v == label.1))
}

fn window(series: &DumpSeries, t0: f64, t1: f64) -> Vec<(f64, f64)> {
    series
        .points
        .iter()
        .copied()
        .filter(|(t, _)| *t >= t0 - EPS && *t <= t1 + EPS)
        .collect()
}

/// Per-second counter increases ×8 between successive samples in the
/// window, in bit/s.
fn counter_bitrates(series: &DumpSeries, t0: f64, t1: f64) -> Vec<f64> {
    window(series, t0, t1)
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) * 8.0 / (w[1].0 - w[0].0))
        .collect()
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn span(values: &[f64]) -> Option<(f64, f64)> {
    let min = values.iter().copied().reduce(f64::min)?;
    let max = values.iter().copied().reduce(f64::max)?;
    Some((min, max))
}

fn mbps(bps: f64) -> String {
    format!("{:.3} Mbps", bps / 1e6)
}

/// Every value lies within `rel` of `target`.
fn within_band(id: &str, values: &[f64], target: f64, rel: f64) -> AssertionResult {
    let bound = format!("{} ±{}%", mbps(target), rel * 100.0);
    match span(values) {
        None => AssertionResult::no_data(id, bound),
        Some((lo, hi)) => AssertionResult::new(
            id,
            lo >= target * (1.0 - rel) - EPS && hi <= target * (1.0 + rel) + EPS,
            format!("{} .. {}", mbps(lo), mbps(hi)),
            bound,
        ),
    }
}

fn at_most(id: &str, values: &[f64], limit: f64) -> AssertionResult {
    let bound = format!("<= {}", mbps(limit));
    match span(values) {
        None => AssertionResult::no_data(id, bound),
        Some((_, hi)) => AssertionResult::new(id, hi <= limit + EPS, format!("max {}", mbps(hi)), bound),
    }
}

fn node_tx_rates(dump: &TsdbDump, node: &str, t0: f64, t1: f64) -> Vec<f64> {
    find(dump, NODE_TX, ("node", node))
        .map(|s| counter_bitrates(s, t0, t1))
        .unwrap_or_default()
}

fn gauge_values(dump: &TsdbDump, name: &str, label: (&str, &str), t0: f64, t1: f64) -> Vec<f64> {
    find(dump, name, label)
        .map(|s| window(s, t0, t1).into_iter().map(|(_, v)| v).collect())
        .unwrap_or_default()
}

const RATE_TOL: f64 = 0.05;
const MBPS_100: f64 = 100e6;

pub const RESELECTION_AT_S: f64 = 90.0;
pub const UE2_CORE_IP: &str = "10.45.0.3";
pub const UE2_EDGE_IP: &str = "10.46.0.2";

fn check_ip_transition(dump: &TsdbDump) -> AssertionResult {
    let id = "1d.ue2_ip_transition";
    let bound = format!("{UE2_CORE_IP} released and {UE2_EDGE_IP} established at {RESELECTION_AT_S} s");
    let sessions = &dump.meta.sessions;
    let old = sessions.iter().find(|s| s.ue == 2 && s.ue_ip == UE2_CORE_IP);
    let new = sessions.iter().find(|s| s.ue == 2 && s.ue_ip == UE2_EDGE_IP);
    let measured = format!(
        "ue2 sessions: {}",
        sessions
            .iter()
            .filter(|s| s.ue == 2)
            .map(|s| format!(
                "{}@{} [{}, {}]",
                s.ue_ip,
                s.upf,
                s.established_s,
                s.released_s.map_or("-".into(), |r| r.to_string())
            ))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let passed = match (old, new) {
        (Some(old), Some(new)) => {
            old.upf == "core"
                && new.upf == "edge"
                && old
                    .released_s
                    .is_some_and(|r| (r - RESELECTION_AT_S).abs() < EPS)
                && (new.established_s - RESELECTION_AT_S).abs() < EPS
        }
        _ => false,
    };
    AssertionResult::new(id, passed, measured, bound)
}

fn check_cpu_transient(dump: &TsdbDump, id: &str, baseline: Option<f64>, t0: f64, t1: f64) -> AssertionResult {
    let values = gauge_values(dump, NODE_CPU, ("node", "core"), t0, t1);
    let Some(baseline) = baseline else {
        return AssertionResult::no_data(id, "baseline (t < 10 s) + 0.2");
    };
    let bound = format!("> {:.3} (baseline {baseline:.3} + 0.2)", baseline + 0.2);
    match span(&values) {
        None => AssertionResult::no_data(id, bound),
        Some((_, hi)) => AssertionResult::new(id, hi > baseline + 0.2, format!("max {hi:.3}"), bound),
    }
}

/// UPF re-selection: traffic plateaus on the core and edge nodes, per-UE
/// RAN bitrates, UE2's address change and the deploy/teardown CPU pulses.
pub fn check_experiment1(dump: &TsdbDump) -> Result<Vec<AssertionResult>, MissingSeries> {
    require(dump, &[NODE_TX, NODE_CPU, RAN_DL])?;
    let mut out = vec![
        within_band(
            "1a.core_tx_100mbps",
            &node_tx_rates(dump, "core", 35.0, 55.0),
            MBPS_100,
            RATE_TOL,
        ),
        at_most("1a.edge_tx_idle", &node_tx_rates(dump, "edge", 35.0, 55.0), 1e6),
        within_band(
            "1b.core_tx_200mbps",
            &node_tx_rates(dump, "core", 65.0, 85.0),
            2.0 * MBPS_100,
            RATE_TOL,
        ),
    ];
    for ue in ["1", "2"] {
        out.push(within_band(
            &format!("1b.ue{ue}_dl_100mbps"),
            &gauge_values(dump, RAN_DL, ("ue", ue), 65.0, 85.0),
            MBPS_100,
            RATE_TOL,
        ));
    }
    out.push(within_band(
        "1c.core_tx_100mbps",
        &node_tx_rates(dump, "core", 105.0, 125.0),
        MBPS_100,
        RATE_TOL,
    ));
    out.push(within_band(
        "1c.edge_tx_100mbps",
        &node_tx_rates(dump, "edge", 105.0, 125.0),
        MBPS_100,
        RATE_TOL,
    ));
    out.push(check_ip_transition(dump));
    let baseline = mean(&gauge_values(dump, NODE_CPU, ("node", "core"), 0.0, 9.9));
    out.push(check_cpu_transient(dump, "1e.cpu_install_transient", baseline, 10.0, 15.0));
    out.push(check_cpu_transient(
        dump,
        "1e.cpu_termination_transient",
        baseline,
        140.0,
        145.0,
    ));
    Ok(out)
}

pub const GAIN_EVENTS_S: [f64; 3] = [40.0, 70.0, 100.0];
pub const GAIN_STEP_DB: f64 = -4.0;
pub const UL_OFFERED_BPS: f64 = 120e6;
pub const UL_THROTTLED_BPS: f64 = 66_447_000.0;

fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + EPS)
}

fn check_monotone_drop(dump: &TsdbDump, name: &str, tag: &str) -> [AssertionResult; 2] {
    let values = gauge_values(dump, name, ("ue", "1"), 0.0, f64::MAX);
    let first = values.first().copied();
    let last = values.last().copied();
    let measured = match (first, last) {
        (Some(f), Some(l)) => format!("first {f}, last {l}, {} samples", values.len()),
        _ => "no samples".into(),
    };
    [
        AssertionResult::new(
            &format!("2b.{tag}_non_increasing"),
            !values.is_empty() && non_increasing(&values),
            measured.clone(),
            "non-increasing over the run",
        ),
        AssertionResult::new(
            &format!("2b.{tag}_drops"),
            matches!((first, last), (Some(f), Some(l)) if l < f),
            measured,
            "last < first",
        ),
    ]
}

/// UE mobility: SNR steps at each gain change, MCS/CQI degradation and the
/// uplink bitrate collapsing onto the reduced link capacity.
pub fn check_experiment2(dump: &TsdbDump) -> Result<Vec<AssertionResult>, MissingSeries> {
    require(dump, &[RAN_SNR, RAN_MCS_UL, RAN_CQI, RAN_UL])?;
    let noisy = dump
        .meta
        .overrides
        .get("snr_noise_std_db")
        .is_some_and(|v| *v > 0.0);
    let tol = if noisy { 1.5 } else { 0.1 };
    let mut out = Vec::new();
    for e in GAIN_EVENTS_S {
        let id = format!("2a.snr_step_at_{e}s");
        let bound = format!("{GAIN_STEP_DB} dB ±{tol}");
        let before = mean(&gauge_values(dump, RAN_SNR, ("ue", "1"), e - 9.0, e - 1.0));
        let after = mean(&gauge_values(dump, RAN_SNR, ("ue", "1"), e, e + 9.0));
        out.push(match (before, after) {
            (Some(b), Some(a)) => {
                let step = a - b;
                AssertionResult::new(
                    &id,
                    (step - GAIN_STEP_DB).abs() <= tol + EPS,
                    format!("{step:.3} dB ({b:.3} -> {a:.3})"),
                    bound,
                )
            }
            _ => AssertionResult::no_data(&id, bound),
        });
    }
    out.extend(check_monotone_drop(dump, RAN_MCS_UL, "mcs_ul"));
    out.extend(check_monotone_drop(dump, RAN_CQI, "cqi"));

    let last_event = GAIN_EVENTS_S[GAIN_EVENTS_S.len() - 1];
    out.push(within_band(
        "2c.ul_before_final_step",
        &gauge_values(dump, RAN_UL, ("ue", "1"), 11.0, last_event),
        UL_OFFERED_BPS,
        RATE_TOL,
    ));
    out.push(within_band(
        "2c.ul_after_final_step",
        &gauge_values(dump, RAN_UL, ("ue", "1"), last_event + 1.0, f64::MAX),
        UL_THROTTLED_BPS,
        RATE_TOL,
    ));
    let ul = gauge_values(dump, RAN_UL, ("ue", "1"), 11.0, f64::MAX);
    out.push(AssertionResult::new(
        "2c.ul_monotone",
        !ul.is_empty() && non_increasing(&ul),
        format!("{} samples", ul.len()),
        "non-increasing from 11 s",
    ));
    Ok(out)
}
