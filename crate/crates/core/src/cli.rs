//! Command-line front end. Exit codes: 0 success, 1 failed assertions,
//! 2 usage or input errors.

use std::collections::BTreeMap;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use crate::monitoring::{export_csv, render_panel_svg, PanelSpec, Selector, TsdbDump};
use crate::scenario::checks::{check_experiment1, check_experiment2, AssertionResult};
use crate::scenario::model::Scenario;
use crate::scenario::runner::{resolve_out_dir, run_fast, write_artifacts, RunOutcome};
use crate::serve::{run_serve, ServeOptions, ServePorts};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mecsim", version, about = "MEC-enabled 5G testbed simulator with end-to-end monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Fast,
    Serve,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write report, dump, CSV and SVG panels.
    Run {
        /// Scenario file (JSON or YAML), or the name of a built-in one.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Fast)]
        mode: Mode,
        #[arg(long, env = "SIM_OUT_DIR")]
        out: Option<PathBuf>,
        /// Parameter override `key=value`; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Wall milliseconds per simulated tick in serve mode.
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Node exporter ports for master, core, edge and monitoring.
        #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [9101u16, 9102, 9103, 9104])]
        node_ports: Vec<u16>,
        #[arg(long, default_value_t = 9110)]
        sampler_port: u16,
        #[arg(long, default_value_t = 9999)]
        ran_api_port: u16,
    },
    /// Evaluate the experiment assertions against a TSDB dump.
    Check {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        experiment: u8,
        #[arg(long)]
        tsdb: PathBuf,
    },
    /// Export series from a TSDB dump to CSV.
    Export {
        #[arg(long)]
        tsdb: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Selector such as `ran_ue_snr_db{ue="1"}`; all series if absent.
        #[arg(long)]
        series: Option<String>,
    },
    /// Render one panel from a TSDB dump as SVG.
    Plot {
        #[arg(long)]
        tsdb: PathBuf,
        /// Selector, optionally wrapped as `rate(...)`.
        #[arg(long)]
        panel: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
}

fn parse_overrides(items: &[String]) -> Result<BTreeMap<String, f64>, String> {
    items
        .iter()
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| format!("override {item:?} is not key=value"))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| format!("override {item:?} has a non-numeric value"))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn load_scenario(arg: &str) -> Result<Scenario, String> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(s) = Scenario::builtin(arg) {
            return Ok(s);
        }
    }
    Scenario::load(path).map_err(|e| e.to_string())
}

fn print_assertions(results: &[AssertionResult]) {
    for a in results {
        println!(
            "{} {}: measured {} (bound {})",
            if a.passed { "PASS" } else { "FAIL" },
            a.id,
            a.measured,
            a.bound
        );
    }
}

fn load_dump(path: &Path) -> Result<TsdbDump, i32> {
    TsdbDump::load(path).map_err(|e| {
        eprintln!("error: cannot load {}: {e}", path.display());
        EXIT_USAGE
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario: &str,
    seed: u64,
    mode: Mode,
    out: Option<PathBuf>,
    overrides: &[String],
    tick_ms: u64,
    bind: IpAddr,
    ports: ServePorts,
) -> i32 {
    let scenario = match load_scenario(scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let overrides = match parse_overrides(overrides) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let result = match mode {
        Mode::Fast => run_fast(&scenario, seed, &overrides),
        Mode::Serve => {
            let options = ServeOptions {
                bind,
                ports,
                tick_wall: Duration::from_millis(tick_ms),
                on_ready: Some(Box::new(|addrs| {
                    for (target, addr) in &addrs.exporters {
                        eprintln!("serving {target} at http://{addr}/metrics");
                    }
                    eprintln!("serving RAN API at ws://{}/", addrs.ran_api);
                })),
            };
            run_serve(&scenario, seed, &overrides, options)
        }
    };
    let mut outcome: RunOutcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let dir = resolve_out_dir(out);
    if let Err(e) = write_artifacts(&mut outcome, &dir) {
        eprintln!("error: cannot write artifacts to {}: {e}", dir.display());
        return EXIT_USAGE;
    }
    let report = &outcome.report;
    for e in &report.errors {
        eprintln!("runtime error at {} s ({}): {}", e.at_s, e.action, e.message);
    }
    print_assertions(&report.assertions);
    println!(
        "{} seed {}: {} events, {:.2} s wall, artifacts in {}",
        report.scenario,
        report.seed,
        report.events_fired,
        report.wall_clock.as_secs_f64(),
        dir.display()
    );
    if report.passed {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

fn cmd_check(experiment: u8, tsdb: &Path) -> i32 {
    let dump = match load_dump(tsdb) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let verdict = match experiment {
        1 => check_experiment1(&dump),
        _ => check_experiment2(&dump),
    };
    match verdict {
        Ok(results) => {
            print_assertions(&results);
            if results.iter().all(|a| a.passed) {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(missing) => {
            println!("FAIL {missing}");
            EXIT_FAILED
        }
    }
}

fn cmd_export(tsdb: &Path, csv: &Path, series: Option<&str>) -> i32 {
    let dump = match load_dump(tsdb) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let store = match dump.store() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let selected = match series.map(Selector::parse).transpose() {
        Ok(Some(sel)) => sel.select(&store),
        Ok(None) => store.all_series(),
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match export_csv(&selected, csv) {
        Ok(rows) => {
            println!("{rows} rows written to {}", csv.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn cmd_plot(tsdb: &Path, panel: &str, out: &Path, title: Option<&str>) -> i32 {
    let dump = match load_dump(tsdb) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let result = dump
        .store()
        .map_err(|e| e.to_string())
        .and_then(|store| {
            let spec = PanelSpec::parse(panel).map_err(|e| e.to_string())?;
            render_panel_svg(&spec.evaluate(&store), title.unwrap_or(panel), out)
                .map_err(|e| e.to_string())
        });
    match result {
        Ok(()) => {
            println!("panel written to {}", out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

/// Parses `argv` (program name first) and dispatches. Returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            seed,
            mode,
            out,
            overrides,
            tick_ms,
            bind,
            node_ports,
            sampler_port,
            ran_api_port,
        } => {
            let ports = ServePorts {
                node_exporters: [node_ports[0], node_ports[1], node_ports[2], node_ports[3]],
                sampler: sampler_port,
                ran_api: ran_api_port,
            };
            cmd_run(&scenario, seed, mode, out, &overrides, tick_ms, bind, ports)
        }
        Command::Check { experiment, tsdb } => cmd_check(experiment, &tsdb),
        Command::Export { tsdb, csv, series } => cmd_export(&tsdb, &csv, series.as_deref()),
        Command::Plot {
            tsdb,
            panel,
            out,
            title,
        } => cmd_plot(&tsdb, &panel, &out, title.as_deref()),
    }
}
