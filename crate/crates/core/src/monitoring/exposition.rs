//! Metric registries and the line-oriented scrape text format.
//!
//! ```text
//! # TYPE node_network_transmit_bytes_total counter
//! node_network_transmit_bytes_total{node="core"} 12500000
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Labels, Sample};
use crate::kernel::SimTime;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegistryError {
    #[error("metric {0} is already registered")]
    DuplicateMetric(String),
    #[error("metric {0} is not registered")]
    UnknownMetric(String),
    #[error("invalid metric or label name {0:?}")]
    InvalidName(String),
    #[error("labels of {name} do not match its descriptor keys {expected:?}")]
    LabelMismatch { name: String, expected: Vec<String> },
    #[error("value of {0} is not finite")]
    NonFinite(String),
    #[error("counter {0} would decrease")]
    CounterDecrease(String),
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Gauge,
    Counter,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Gauge => "gauge",
            MetricKind::Counter => "counter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub name: String,
    pub kind: MetricKind,
    pub help: String,
    pub label_keys: Vec<String>,
}

impl MetricDescriptor {
    pub fn gauge(name: &str, help: &str, label_keys: &[&str]) -> Self {
        MetricDescriptor {
            name: name.into(),
            kind: MetricKind::Gauge,
            help: help.into(),
            label_keys: label_keys.iter().map(|k| k.to_string()).collect(),
        }
    }

    pub fn counter(name: &str, help: &str, label_keys: &[&str]) -> Self {
        MetricDescriptor {
            kind: MetricKind::Counter,
            ..MetricDescriptor::gauge(name, help, label_keys)
        }
    }
}

pub fn is_valid_metric_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == ':')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':')
}

pub fn is_valid_label_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone)]
struct Family {
    descriptor: MetricDescriptor,
    values: BTreeMap<Labels, f64>,
}

/// The current values an exporter exposes, keyed by metric name.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    families: BTreeMap<String, Family>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register(&mut self, descriptor: MetricDescriptor) -> Result<(), RegistryError> {
        if !is_valid_metric_name(&descriptor.name) {
            return Err(RegistryError::InvalidName(descriptor.name));
        }
        if let Some(bad) = descriptor
            .label_keys
            .iter()
            .find(|k| !is_valid_label_name(k))
        {
            return Err(RegistryError::InvalidName(bad.clone()));
        }
        if self.families.contains_key(&descriptor.name) {
            return Err(RegistryError::DuplicateMetric(descriptor.name));
        }
        self.families.insert(
            descriptor.name.clone(),
            Family {
                descriptor,
                values: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn descriptor(&self, name: &str) -> Option<&MetricDescriptor> {
        self.families.get(name).map(|f| &f.descriptor)
    }

    pub fn set(&mut self, name: &str, labels: Labels, value: f64) -> Result<(), RegistryError> {
        let family = self
            .families
            .get_mut(name)
            .ok_or_else(|| RegistryError::UnknownMetric(name.to_string()))?;
        let keys_match = labels.len() == family.descriptor.label_keys.len()
            && family
                .descriptor
                .label_keys
                .iter()
                .all(|k| labels.contains_key(k));
        if !keys_match {
            return Err(RegistryError::LabelMismatch {
                name: name.to_string(),
                expected: family.descriptor.label_keys.clone(),
            });
        }
        if !value.is_finite() {
            return Err(RegistryError::NonFinite(name.to_string()));
        }
        if family.descriptor.kind == MetricKind::Counter
            && family.values.get(&labels).is_some_and(|old| value < *old)
        {
            return Err(RegistryError::CounterDecrease(name.to_string()));
        }
        family.values.insert(labels, value);
        Ok(())
    }

    /// Drops every value of a gauge family; used when the label sets a
    /// source reports change between refreshes.
    pub fn clear_values(&mut self, name: &str) {
        if let Some(f) = self.families.get_mut(name) {
            if f.descriptor.kind == MetricKind::Gauge {
                f.values.clear();
            }
        }
    }

    pub fn value(&self, name: &str, labels: &Labels) -> Option<f64> {
        self.families.get(name)?.values.get(labels).copied()
    }

    pub fn value_count(&self) -> usize {
        self.families.values().map(|f| f.values.len()).sum()
    }

    /// All current values as samples stamped `t`, in render order.
    pub fn samples(&self, t: SimTime) -> Vec<Sample> {
        self.families
            .iter()
            .flat_map(|(name, f)| {
                f.values.iter().map(move |(labels, v)| Sample {
                    name: name.clone(),
                    labels: labels.clone(),
                    value: *v,
                    timestamp: t,
                })
            })
            .collect()
    }

    /// Rebuilds a registry from exposition text. Label keys come from each
    /// metric's first sample; untyped metrics become gauges.
    pub fn from_exposition(text: &str) -> Result<Registry, ParseError> {
        let (samples, kinds) = parse_with_types(text, SimTime::ZERO)?;
        let mut reg = Registry::new();
        for s in samples {
            if reg.descriptor(&s.name).is_none() {
                let kind = kinds.get(&s.name).copied().unwrap_or(MetricKind::Gauge);
                reg.register(MetricDescriptor {
                    name: s.name.clone(),
                    kind,
                    help: String::new(),
                    label_keys: s.labels.keys().cloned().collect(),
                })
                .map_err(|e| ParseError {
                    line: 0,
                    message: e.to_string(),
                })?;
            }
            reg.set(&s.name, s.labels, s.value).map_err(|e| ParseError {
                line: 0,
                message: e.to_string(),
            })?;
        }
        Ok(reg)
    }
}

fn escape_label_value(v: &str, out: &mut String) {
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

/// Formats a finite value with the shortest decimal that parses back to
/// the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub fn render_exposition(registry: &Registry) -> String {
    let mut out = String::new();
    for (name, family) in &registry.families {
        if family.values.is_empty() {
            continue;
        }
        let _ = writeln!(out, "# TYPE {name} {}", family.descriptor.kind.as_str());
        for (labels, value) in &family.values {
            out.push_str(name);
            if !labels.is_empty() {
                out.push('{');
                for (i, (k, v)) in labels.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(k);
                    out.push_str("=\"");
                    escape_label_value(v, &mut out);
                    out.push('"');
                }
                out.push('}');
            }
            out.push(' ');
            out.push_str(&format_value(*value));
            out.push('\n');
        }
    }
    out
}

struct LineParser<'a> {
    rest: &'a str,
    line: usize,
}

impl<'a> LineParser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.line,
            message: message.into(),
        })
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let end = self
            .rest
            .char_indices()
            .find(|(_, c)| !pred(*c))
            .map_or(self.rest.len(), |(i, _)| i);
        let (head, tail) = self.rest.split_at(end);
        self.rest = tail;
        head
    }

    fn skip_spaces(&mut self) {
        self.take_while(|c| c == ' ' || c == '\t');
    }

    fn eat(&mut self, c: char) -> bool {
        if self.rest.starts_with(c) {
            self.rest = &self.rest[c.len_utf8()..];
            true
        } else {
            false
        }
    }

    fn label_value(&mut self) -> Result<String, ParseError> {
        if !self.eat('"') {
            return self.err("expected '\"' to open a label value");
        }
        let mut out = String::new();
        let mut chars = self.rest.char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.rest = &self.rest[i + 1..];
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, '"')) => out.push('"'),
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, other)) => return self.err(format!("bad escape \\{other}")),
                    None => break,
                },
                c => out.push(c),
            }
        }
        self.err("unterminated label value")
    }

    fn labels(&mut self) -> Result<Labels, ParseError> {
        let mut labels = Labels::new();
        if !self.eat('{') {
            return Ok(labels);
        }
        loop {
            self.skip_spaces();
            if self.eat('}') {
                return Ok(labels);
            }
            let key = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
            if !is_valid_label_name(key) {
                return self.err(format!("invalid label name {key:?}"));
            }
            self.skip_spaces();
            if !self.eat('=') {
                return self.err("expected '=' after label name");
            }
            self.skip_spaces();
            let value = self.label_value()?;
            if labels.insert(key.to_string(), value).is_some() {
                return self.err(format!("duplicate label {key}"));
            }
            self.skip_spaces();
            if self.eat(',') {
                continue;
            }
            if self.eat('}') {
                return Ok(labels);
            }
            return self.err("expected ',' or '}' in label set");
        }
    }
}

fn parse_value(token: &str) -> Option<f64> {
    match token {
        "+Inf" | "-Inf" | "NaN" => None,
        t => t.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

/// Parses samples and `# TYPE` declarations.
pub fn parse_with_types(
    text: &str,
    timestamp: SimTime,
) -> Result<(Vec<Sample>, BTreeMap<String, MetricKind>), ParseError> {
    let mut samples = Vec::new();
    let mut kinds = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            if parts.next() == Some("TYPE") {
                let (Some(name), Some(kind)) = (parts.next(), parts.next()) else {
                    return Err(ParseError {
                        line: line_no,
                        message: "incomplete TYPE line".into(),
                    });
                };
                let kind = match kind {
                    "gauge" => MetricKind::Gauge,
                    "counter" => MetricKind::Counter,
                    other => {
                        return Err(ParseError {
                            line: line_no,
                            message: format!("unsupported metric kind {other}"),
                        })
                    }
                };
                kinds.insert(name.to_string(), kind);
            }
            continue;
        }
        let mut p = LineParser {
            rest: line,
            line: line_no,
        };
        let name = p.take_while(|c| c.is_ascii_alphanumeric() || c == '_' || c == ':');
        if !is_valid_metric_name(name) {
            return p.err(format!("invalid metric name {name:?}"));
        }
        let labels = p.labels()?;
        let mut tokens = p.rest.split_whitespace();
        let Some(value_token) = tokens.next() else {
            return p.err("missing value");
        };
        let Some(value) = parse_value(value_token) else {
            return p.err(format!("invalid value {value_token:?}"));
        };
        if let Some(ts) = tokens.next() {
            if ts.parse::<i64>().is_err() {
                return p.err(format!("invalid timestamp {ts:?}"));
            }
        }
        if tokens.next().is_some() {
            return p.err("trailing tokens after value");
        }
        samples.push(Sample {
            name: name.to_string(),
            labels,
            value,
            timestamp,
        });
    }
    Ok((samples, kinds))
}

/// Parses exposition text into samples stamped with the caller's time.
pub fn parse_exposition(text: &str, timestamp: SimTime) -> Result<Vec<Sample>, ParseError> {
    parse_with_types(text, timestamp).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitoring::labels;
    use proptest::prelude::*;

    #[test]
    fn empty_registry_renders_nothing() {
        assert_eq!(render_exposition(&Registry::new()), "");
        let mut r = Registry::new();
        r.register(MetricDescriptor::gauge("x", "", &[])).unwrap();
        assert_eq!(render_exposition(&r), "");
    }

    #[test]
    fn renders_type_and_sorted_labels() {
        let mut r = Registry::new();
        r.register(MetricDescriptor::gauge(
            "ran_ue_cqi",
            "CQI",
            &["ue", "cell"],
        ))
        .unwrap();
        r.register(MetricDescriptor::counter(
            "node_network_transmit_bytes_total",
            "",
            &["node"],
        ))
        .unwrap();
        r.set("ran_ue_cqi", labels(&[("ue", "1"), ("cell", "1")]), 13.0)
            .unwrap();
        r.set(
            "node_network_transmit_bytes_total",
            labels(&[("node", "core")]),
            12_500_000.0,
        )
        .unwrap();
        assert_eq!(
            render_exposition(&r),
            "# TYPE node_network_transmit_bytes_total counter\n\
             node_network_transmit_bytes_total{node=\"core\"} 12500000\n\
             # TYPE ran_ue_cqi gauge\n\
             ran_ue_cqi{cell=\"1\",ue=\"1\"} 13\n"
        );
    }

    #[test]
    fn shortest_decimal() {
        assert_eq!(format_value(0.05), "0.05");
        assert_eq!(format_value(0.065), "0.065");
        assert_eq!(format_value(8.0), "8");
        assert_eq!(format_value(66_447_000.0), "66447000");
    }

    #[test]
    fn registry_rejections() {
        let mut r = Registry::new();
        r.register(MetricDescriptor::counter("c_total", "", &["k"]))
            .unwrap();
        assert!(matches!(
            r.register(MetricDescriptor::gauge("c_total", "", &[])),
            Err(RegistryError::DuplicateMetric(_))
        ));
        assert!(matches!(
            r.register(MetricDescriptor::gauge("9bad", "", &[])),
            Err(RegistryError::InvalidName(_))
        ));
        assert!(matches!(
            r.set("c_total", labels(&[("x", "1")]), 1.0),
            Err(RegistryError::LabelMismatch { .. })
        ));
        assert!(matches!(
            r.set("nope", Labels::new(), 1.0),
            Err(RegistryError::UnknownMetric(_))
        ));
        r.set("c_total", labels(&[("k", "a")]), 5.0).unwrap();
        assert_eq!(
            r.set("c_total", labels(&[("k", "a")]), 4.0),
            Err(RegistryError::CounterDecrease("c_total".into()))
        );
        assert_eq!(
            r.set("c_total", labels(&[("k", "a")]), f64::NAN),
            Err(RegistryError::NonFinite("c_total".into()))
        );
    }

    #[test]
    fn unsorted_labels_are_canonicalized() {
        let s = parse_exposition("m{b=\"2\",a=\"1\"} 3\n", SimTime(7)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].labels, labels(&[("a", "1"), ("b", "2")]));
        assert_eq!(s[0].timestamp, SimTime(7));
        assert_eq!(
            s[0].labels.keys().collect::<Vec<_>>(),
            vec![&"a".to_string(), &"b".to_string()]
        );
    }

    #[test]
    fn malformed_value_reports_line() {
        let text = "# TYPE m gauge\nm 1\nm{a=\"x\"} twelve\n";
        let err = parse_exposition(text, SimTime::ZERO).unwrap_err();
        assert_eq!(err.line, 3);
        assert!(parse_exposition("m{a=\"x} 1", SimTime::ZERO).is_err());
        assert!(parse_exposition("m{a=x} 1", SimTime::ZERO).is_err());
        assert!(parse_exposition("m NaN", SimTime::ZERO).is_err());
        assert!(parse_exposition("m 1 2 3", SimTime::ZERO).is_err());
    }

    #[test]
    fn escapes_survive() {
        let mut r = Registry::new();
        r.register(MetricDescriptor::gauge("m", "", &["v"])).unwrap();
        r.set("m", labels(&[("v", "a\"b\\c\nd,}")]), -0.5).unwrap();
        let back = Registry::from_exposition(&render_exposition(&r)).unwrap();
        assert_eq!(back.value("m", &labels(&[("v", "a\"b\\c\nd,}")])), Some(-0.5));
    }

    fn arb_registry() -> impl Strategy<Value = Registry> {
        let family = (
            "[a-z_][a-z0-9_]{0,12}",
            any::<bool>(),
            prop::collection::btree_set("[a-z_][a-z0-9_]{0,6}", 0..4),
        );
        prop::collection::vec(family, 0..5).prop_flat_map(|families| {
            let per_family: Vec<_> = families
                .into_iter()
                .map(|(name, counter, keys)| {
                    let keys: Vec<String> = keys.into_iter().collect();
                    let n = keys.len();
                    let rows = prop::collection::vec(
                        (
                            prop::collection::vec(any::<String>(), n..=n),
                            prop::num::f64::NORMAL
                                | prop::num::f64::SUBNORMAL
                                | prop::num::f64::ZERO,
                        ),
                        0..4,
                    );
                    (Just((name, counter, keys)), rows)
                })
                .collect();
            per_family.prop_map(|families| {
                let mut reg = Registry::new();
                for ((name, counter, keys), rows) in families {
                    let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
                    let desc = if counter {
                        MetricDescriptor::counter(&name, "", &key_refs)
                    } else {
                        MetricDescriptor::gauge(&name, "", &key_refs)
                    };
                    if reg.register(desc).is_err() {
                        continue;
                    }
                    for (values, v) in rows {
                        let labels: Labels = keys.iter().cloned().zip(values).collect();
                        let v = if counter { v.abs() } else { v };
                        let _ = reg.set(&name, labels, v);
                    }
                }
                reg
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn exposition_round_trip(reg in arb_registry()) {
            let text = render_exposition(&reg);
            let parsed = parse_exposition(&text, SimTime(3)).unwrap();
            prop_assert_eq!(parsed, reg.samples(SimTime(3)));
            let rebuilt = Registry::from_exposition(&text).unwrap();
            prop_assert_eq!(render_exposition(&rebuilt), text);
        }
    }
}
