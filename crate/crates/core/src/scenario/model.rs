//! Scenario documents: a duration, optional parameter overrides and a list
//! of timestamped actions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cluster::NodeName;
use crate::corenet::{Direction, Locality, UeId};
use crate::kernel::SimTime;
use crate::traffic::FlowSpec;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchemaError {
    #[error("scenario document is not valid JSON or YAML: {0}")]
    Syntax(String),
    #[error("scenario field {field}: {message}")]
    Scenario { field: String, message: String },
    #[error("event {index}, field {field}: {message}")]
    Event {
        index: usize,
        field: String,
        message: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartFlowArgs {
    pub flow: String,
    pub ue: UeId,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_mbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_bps: Option<u64>,
    pub server: NodeName,
}

impl StartFlowArgs {
    pub fn rate_bps(&self) -> u64 {
        match (self.rate_bps, self.rate_mbps) {
            (Some(bps), _) => bps,
            (None, Some(mbps)) => (mbps * 1e6).round() as u64,
            (None, None) => 0,
        }
    }

    pub fn to_spec(&self) -> FlowSpec {
        FlowSpec {
            id: self.flow.clone(),
            ue: self.ue,
            direction: self.direction,
            rate_bps: self.rate_bps(),
            server: self.server,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "args", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    InstallChart {
        chart: String,
    },
    UninstallChart {
        chart: String,
    },
    GnbConnect {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amf_address: Option<String>,
    },
    UeAttach {
        ue: UeId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snr_ref_db: Option<f64>,
    },
    StartFlow(StartFlowArgs),
    StopFlow {
        flow: String,
    },
    ReassignUpf {
        ue: UeId,
        target: Locality,
    },
    SetRxGainOffset {
        offset_db: f64,
    },
}

pub const ACTION_NAMES: [&str; 8] = [
    "install_chart",
    "uninstall_chart",
    "gnb_connect",
    "ue_attach",
    "start_flow",
    "stop_flow",
    "reassign_upf",
    "set_rx_gain_offset",
];

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::InstallChart { .. } => "install_chart",
            Action::UninstallChart { .. } => "uninstall_chart",
            Action::GnbConnect { .. } => "gnb_connect",
            Action::UeAttach { .. } => "ue_attach",
            Action::StartFlow(_) => "start_flow",
            Action::StopFlow { .. } => "stop_flow",
            Action::ReassignUpf { .. } => "reassign_upf",
            Action::SetRxGainOffset { .. } => "set_rx_gain_offset",
        }
    }

    /// Checks that go beyond the field types.
    fn validate(&self) -> Result<(), (String, String)> {
        match self {
            Action::StartFlow(args) => {
                match (args.rate_bps, args.rate_mbps) {
                    (Some(_), Some(_)) => {
                        return Err((
                            "args.rate_bps".into(),
                            "give rate_bps or rate_mbps, not both".into(),
                        ))
                    }
                    (None, None) => {
                        return Err(("args.rate_bps".into(), "a flow rate is required".into()))
                    }
                    (None, Some(m)) if !(m.is_finite() && m > 0.0) => {
                        return Err(("args.rate_mbps".into(), "must be positive".into()))
                    }
                    _ => {}
                }
                if args.rate_bps() == 0 {
                    return Err(("args.rate_bps".into(), "must be positive".into()));
                }
                Ok(())
            }
            Action::SetRxGainOffset { offset_db } if !offset_db.is_finite() => {
                Err(("args.offset_db".into(), "must be finite".into()))
            }
            Action::UeAttach {
                snr_ref_db: Some(s),
                ..
            } if !s.is_finite() => Err(("args.snr_ref_db".into(), "must be finite".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
    #[serde(flatten)]
    pub action: Action,
}

impl ScenarioEvent {
    pub fn new(at_s: f64, action: Action) -> Self {
        ScenarioEvent {
            at_s,
            step: None,
            action,
        }
    }

    pub fn at(&self) -> SimTime {
        SimTime::from_secs(self.at_s).expect("validated on parse")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
    pub events: Vec<ScenarioEvent>,
}

impl Scenario {
    pub fn duration(&self) -> SimTime {
        SimTime::from_secs(self.duration_s).expect("validated on parse")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn experiment1() -> Scenario {
        parse_scenario(include_str!("../../../../scenarios/experiment1.json"))
            .expect("bundled scenario is valid")
    }

    pub fn experiment2() -> Scenario {
        parse_scenario(include_str!("../../../../scenarios/experiment2.json"))
            .expect("bundled scenario is valid")
    }

    pub fn builtin(name: &str) -> Option<Scenario> {
        match name {
            "experiment1" => Some(Scenario::experiment1()),
            "experiment2" => Some(Scenario::experiment2()),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Scenario, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(parse_scenario(&text)?)
    }
}

fn scenario_err(field: &str, message: impl Into<String>) -> SchemaError {
    SchemaError::Scenario {
        field: field.into(),
        message: message.into(),
    }
}

fn event_err(index: usize, field: &str, message: impl Into<String>) -> SchemaError {
    SchemaError::Event {
        index,
        field: field.into(),
        message: message.into(),
    }
}

/// Pulls the offending field name out of a serde message such as
/// "missing field `chart`".
fn serde_field(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

fn time_on_grid(secs: f64) -> bool {
    SimTime::from_secs(secs).is_ok()
}

fn parse_event(index: usize, value: &Value, duration_s: f64) -> Result<ScenarioEvent, SchemaError> {
    let obj = value
        .as_object()
        .ok_or_else(|| event_err(index, "event", "must be an object"))?;
    if let Some(extra) = obj
        .keys()
        .find(|k| !["at_s", "step", "action", "args"].contains(&k.as_str()))
    {
        return Err(event_err(index, extra, "unknown field"));
    }
    let at_s = obj
        .get("at_s")
        .ok_or_else(|| event_err(index, "at_s", "missing"))?
        .as_f64()
        .ok_or_else(|| event_err(index, "at_s", "must be a number"))?;
    if !time_on_grid(at_s) {
        return Err(event_err(
            index,
            "at_s",
            "must be a non-negative multiple of 0.1 s",
        ));
    }
    if at_s > duration_s {
        return Err(event_err(index, "at_s", "lies beyond the scenario duration"));
    }
    let step = match obj.get("step") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(event_err(index, "step", "must be a string")),
    };
    let name = obj
        .get("action")
        .ok_or_else(|| event_err(index, "action", "missing"))?
        .as_str()
        .ok_or_else(|| event_err(index, "action", "must be a string"))?;
    if !ACTION_NAMES.contains(&name) {
        return Err(event_err(
            index,
            "action",
            format!("unknown action {name:?}"),
        ));
    }
    let args = obj.get("args").cloned().unwrap_or(Value::Object(Default::default()));
    if !args.is_object() {
        return Err(event_err(index, "args", "must be an object"));
    }
    let tagged = serde_json::json!({ "action": name, "args": args });
    let action: Action = serde_json::from_value(tagged).map_err(|e| {
        let msg = e.to_string();
        let field = serde_field(&msg)
            .filter(|f| !f.contains(' '))
            .map(|f| format!("args.{f}"))
            .unwrap_or_else(|| "args".into());
        event_err(index, &field, msg)
    })?;
    action
        .validate()
        .map_err(|(field, msg)| event_err(index, &field, msg))?;
    Ok(ScenarioEvent { at_s, step, action })
}

/// Parses and validates a scenario document. JSON is tried first; YAML is
/// accepted as a fallback.
pub fn parse_scenario(text: &str) -> Result<Scenario, SchemaError> {
    let doc: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(json_err) => serde_yaml::from_str(text)
            .map_err(|_| SchemaError::Syntax(json_err.to_string()))?,
    };
    let obj = doc
        .as_object()
        .ok_or_else(|| scenario_err("document", "must be an object"))?;
    if let Some(extra) = obj
        .keys()
        .find(|k| !["name", "duration_s", "overrides", "events"].contains(&k.as_str()))
    {
        return Err(scenario_err(extra, "unknown field"));
    }
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| scenario_err("name", "a string is required"))?
        .to_string();
    let duration_s = obj
        .get("duration_s")
        .and_then(Value::as_f64)
        .ok_or_else(|| scenario_err("duration_s", "a number is required"))?;
    if !time_on_grid(duration_s) {
        return Err(scenario_err(
            "duration_s",
            "must be a non-negative multiple of 0.1 s",
        ));
    }
    let mut overrides = BTreeMap::new();
    match obj.get("overrides") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (k, v) in map {
                let v = v
                    .as_f64()
                    .ok_or_else(|| scenario_err(&format!("overrides.{k}"), "must be a number"))?;
                overrides.insert(k.clone(), v);
            }
        }
        Some(_) => return Err(scenario_err("overrides", "must be an object")),
    }
    let events = match obj.get("events") {
        None => return Err(scenario_err("events", "a list is required")),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_event(i, v, duration_s))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(scenario_err("events", "must be a list")),
    };
    Ok(Scenario {
        name,
        duration_s,
        overrides,
        events,
    })
}
