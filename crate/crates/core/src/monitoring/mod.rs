//! End-to-end monitoring: one exporter per node, a RAN sampler, a scraper
//! feeding an in-memory time-series store, and CSV/SVG export.

pub mod export;
pub mod exporters;
pub mod exposition;
pub mod tsdb;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

pub use export::{export_csv, parse_csv, render_panel_svg, ExportError, PanelSpec, Selector};
pub use exporters::{
    scrape, Exporter, MonitoringPlane, NodeExporter, RanSampler, SamplerError, ScrapeError,
    ScrapeTarget, METRIC_CATALOG,
};
pub use exposition::{
    parse_exposition, render_exposition, MetricDescriptor, MetricKind, ParseError, Registry,
};
pub use tsdb::{
    DumpMeta, DumpSeries, LabelFilter, Series, SeriesKey, SeriesStore, SessionRecord, TsdbDump,
};

/// Label set of one series; keys are kept sorted.
pub type Labels = BTreeMap<String, String>;

pub fn labels(pairs: &[(&str, &str)]) -> Labels {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// `k=v;k=v`, keys sorted.
pub fn serialize_labels(labels: &Labels) -> String {
    labels
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn deserialize_labels(text: &str) -> Result<Labels, String> {
    if text.is_empty() {
        return Ok(Labels::new());
    }
    text.split(';')
        .map(|pair| {
            pair.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("label pair {pair:?} lacks '='"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub name: String,
    pub labels: Labels,
    pub value: f64,
    pub timestamp: SimTime,
}
