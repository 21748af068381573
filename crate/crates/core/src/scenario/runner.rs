//! Runs a scenario through the kernel and turns the result into a report
//! plus on-disk artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::checks::{check_experiment1, check_experiment2, AssertionResult};
use super::model::Scenario;
use crate::kernel::{Kernel, KernelError, SimTime};
use crate::monitoring::{
    export_csv, render_panel_svg, DumpMeta, ExportError, PanelSpec, SessionRecord, TsdbDump,
};
use crate::ran::RanError;
use crate::testbed::{OverrideError, RuntimeError, SimEvent, SimParams, Testbed};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Override(#[from] OverrideError),
    #[error(transparent)]
    Config(#[from] RanError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{0}")]
    Serve(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Paths of the files a run wrote, relative to nothing (as given).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub report: Option<String>,
    pub tsdb: Option<String>,
    pub csv: Option<String>,
    pub svgs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
    pub duration_s: f64,
    pub events_fired: u64,
    pub passed: bool,
    pub assertions: Vec<AssertionResult>,
    pub sessions: Vec<SessionRecord>,
    pub errors: Vec<RuntimeError>,
    pub artifacts: Artifacts,
    /// Wall time of the run. Kept out of report.json so that the file
    /// depends only on the scenario, seed and overrides.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn failed(&self) -> impl Iterator<Item = &AssertionResult> {
        self.assertions.iter().filter(|a| !a.passed)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub dump: TsdbDump,
}

/// A scenario loaded into a kernel and testbed, ready to be advanced.
pub struct Simulation {
    pub scenario: Scenario,
    pub seed: u64,
    pub overrides: BTreeMap<String, f64>,
    pub kernel: Kernel<SimEvent>,
    pub testbed: Testbed,
}

impl Simulation {
    /// Builds the run. Scenario overrides apply first, `extra` on top.
    /// Actions sharing a timestamp become one kernel event, in script order.
    pub fn new(
        scenario: &Scenario,
        seed: u64,
        extra: &BTreeMap<String, f64>,
    ) -> Result<Simulation, RunError> {
        let mut overrides = scenario.overrides.clone();
        overrides.extend(extra.iter().map(|(k, v)| (k.clone(), *v)));
        let params = SimParams::with_overrides(&overrides)?;
        let testbed = Testbed::new(params)?;
        let mut kernel = Kernel::new(seed);
        let mut batches: BTreeMap<SimTime, Vec<_>> = BTreeMap::new();
        for ev in &scenario.events {
            batches
                .entry(ev.at())
                .or_default()
                .push((ev.step.clone(), ev.action.clone()));
        }
        for (at, actions) in batches {
            kernel.schedule(at, SimEvent::Step(actions))?;
        }
        Ok(Simulation {
            scenario: scenario.clone(),
            seed,
            overrides,
            kernel,
            testbed,
        })
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn end(&self) -> SimTime {
        self.scenario.duration()
    }

    pub fn is_done(&self) -> bool {
        self.now() >= self.end()
    }

    pub fn advance_to(&mut self, t: SimTime) -> Result<u64, RunError> {
        Ok(self.kernel.run_until(t.min(self.end()), &mut self.testbed)?)
    }

    pub fn dump(&self) -> TsdbDump {
        let mut meta = DumpMeta::new(&self.scenario.name, self.seed, self.scenario.duration_s);
        meta.overrides = self.overrides.clone();
        meta.sessions = self.testbed.session_table();
        self.testbed.monitoring.store.to_dump(meta)
    }

    pub fn finish(self, wall_clock: Duration) -> RunOutcome {
        let dump = self.dump();
        let assertions = evaluate(&self.scenario.name, &dump, &self.testbed.errors);
        let report = RunReport {
            scenario: self.scenario.name.clone(),
            seed: self.seed,
            overrides: self.overrides,
            duration_s: self.scenario.duration_s,
            events_fired: self.kernel.fired_total(),
            passed: assertions.iter().all(|a| a.passed),
            assertions,
            sessions: dump.meta.sessions.clone(),
            errors: self.testbed.errors.clone(),
            artifacts: Artifacts::default(),
            wall_clock,
        };
        RunOutcome { report, dump }
    }
}

/// Experiment checks chosen by scenario name, plus the runtime-error gate
/// every run carries.
pub fn evaluate(scenario: &str, dump: &TsdbDump, errors: &[RuntimeError]) -> Vec<AssertionResult> {
    let verdicts = match scenario {
        "experiment1" => Some(check_experiment1(dump)),
        "experiment2" => Some(check_experiment2(dump)),
        _ => None,
    };
    let mut out = match verdicts {
        None => Vec::new(),
        Some(Ok(results)) => results,
        Some(Err(missing)) => vec![AssertionResult {
            id: "checks.series_present".into(),
            passed: false,
            measured: missing.to_string(),
            bound: "all checked series recorded".into(),
        }],
    };
    out.push(AssertionResult {
        id: "run.no_runtime_errors".into(),
        passed: errors.is_empty(),
        measured: match errors.first() {
            None => "0 errors".into(),
            Some(e) => format!(
                "{} errors, first at {} s: {}: {}",
                errors.len(),
                e.at_s,
                e.action,
                e.message
            ),
        },
        bound: "0 errors".into(),
    });
    out
}

pub fn run_fast(
    scenario: &Scenario,
    seed: u64,
    overrides: &BTreeMap<String, f64>,
) -> Result<RunOutcome, RunError> {
    let started = std::time::Instant::now();
    let mut sim = Simulation::new(scenario, seed, overrides)?;
    let end = sim.end();
    sim.advance_to(end)?;
    Ok(sim.finish(started.elapsed()))
}

/// Dashboard-style panels written next to the dump: file stem, title and
/// panel expression.
pub const PANELS: [(&str, &str, &str); 6] = [
    ("cpu", "Node CPU utilization", "node_cpu_utilization_ratio"),
    ("tx_rate", "Network transmit (bytes/s)", "rate(node_network_transmit_bytes_total)"),
    ("ran_dl", "RAN downlink bitrate (bit/s)", "ran_ue_downlink_bitrate_bps"),
    ("ran_ul", "RAN uplink bitrate (bit/s)", "ran_ue_uplink_bitrate_bps"),
    ("snr", "UE SNR (dB)", "ran_ue_snr_db"),
    ("mcs_ul", "Uplink MCS", "ran_ue_mcs_ul"),
];

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

/// Writes tsdb.json, series.csv, one SVG per non-empty panel and
/// report.json into `dir`, recording the paths in the report.
pub fn write_artifacts(outcome: &mut RunOutcome, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let tsdb = dir.join("tsdb.json");
    outcome
        .dump
        .write(&tsdb)
        .map_err(|e| RunError::Io(std::io::Error::other(e.to_string())))?;
    let store = outcome
        .dump
        .store()
        .map_err(|e| RunError::Io(std::io::Error::other(e.to_string())))?;
    let csv = dir.join("series.csv");
    export_csv(&store.all_series(), &csv)?;
    let mut svgs = Vec::new();
    for (stem, title, expr) in PANELS {
        let series = PanelSpec::parse(expr)?.evaluate(&store);
        if series.iter().all(|s| s.points.is_empty()) {
            continue;
        }
        let path = dir.join(format!("{stem}.svg"));
        render_panel_svg(&series, title, &path)?;
        svgs.push(path_string(&path));
    }
    let report = dir.join("report.json");
    outcome.report.artifacts = Artifacts {
        report: Some(path_string(&report)),
        tsdb: Some(path_string(&tsdb)),
        csv: Some(path_string(&csv)),
        svgs,
    };
    std::fs::write(&report, outcome.report.to_json())?;
    Ok(())
}

/// Output directory: the explicit one, else `SIM_OUT_DIR`, else `out`.
pub fn resolve_out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os("SIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::model::parse_scenario;

    #[test]
    fn noop_scenario_stays_at_baseline() {
        let s = parse_scenario(r#"{"name":"noop","duration_s":10,"events":[]}"#).unwrap();
        let out = run_fast(&s, 1, &BTreeMap::new()).unwrap();
        assert!(out.report.passed);
        assert_eq!(out.report.events_fired, 0);
        for series in &out.dump.series {
            let first = series.points[0].1;
            assert!(series.points.iter().all(|(_, v)| *v == first), "{}", series.name);
        }
        let cpu = out
            .dump
            .series
            .iter()
            .find(|s| s.name == "node_cpu_utilization_ratio")
            .unwrap();
        assert_eq!(cpu.points.len(), 10);
        assert_eq!(cpu.points[0], (0.0, 0.05));
    }

    #[test]
    fn experiment1_fires_seven_kernel_events() {
        let out = run_fast(&Scenario::experiment1(), 42, &BTreeMap::new()).unwrap();
        assert_eq!(out.report.events_fired, 7);
        assert!(out.report.passed, "{:#?}", out.report.failed().collect::<Vec<_>>());
    }

    #[test]
    fn unknown_override_is_rejected() {
        let overrides = BTreeMap::from([("nope".to_string(), 1.0)]);
        assert!(matches!(
            run_fast(&Scenario::experiment2(), 1, &overrides),
            Err(RunError::Override(OverrideError::UnknownKey(_)))
        ));
    }

    #[test]
    fn runtime_errors_fail_the_report() {
        let s = parse_scenario(
            r#"{"name":"bad","duration_s":5,"events":[{"at_s":1,"action":"ue_attach","args":{"ue":1}}]}"#,
        )
        .unwrap();
        let out = run_fast(&s, 1, &BTreeMap::new()).unwrap();
        assert!(!out.report.passed);
        assert_eq!(out.report.errors[0].at_s, 1.0);
    }
}
