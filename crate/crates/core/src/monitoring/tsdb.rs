//! Append-only in-memory time-series store and its JSON dump.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{serialize_labels, Labels, Sample};
use crate::kernel::{SimTime, TICKS_PER_SECOND};

#[derive(Debug, thiserror::Error)]
pub enum TsdbError {
    #[error("sample for {series} at {at} is not after the last point at {last}")]
    OutOfOrder {
        series: String,
        at: SimTime,
        last: SimTime,
    },
    #[error("sample value for {0} is not finite")]
    NonFinite(String),
    #[error("invalid dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub name: String,
    pub labels: Labels,
}

impl SeriesKey {
    pub fn new(name: &str, labels: Labels) -> Self {
        SeriesKey {
            name: name.to_string(),
            labels,
        }
    }

    pub fn display(&self) -> String {
        if self.labels.is_empty() {
            self.name.clone()
        } else {
            format!("{}{{{}}}", self.name, serialize_labels(&self.labels))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub key: SeriesKey,
    pub points: Vec<(SimTime, f64)>,
}

impl Series {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|(_, v)| *v)
    }
}

/// Equality matchers on label values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelFilter(pub Vec<(String, String)>);

impl LabelFilter {
    pub fn any() -> Self {
        LabelFilter::default()
    }

    pub fn eq(pairs: &[(&str, &str)]) -> Self {
        LabelFilter(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }

    pub fn matches(&self, labels: &Labels) -> bool {
        self.0
            .iter()
            .all(|(k, v)| labels.get(k).is_some_and(|lv| lv == v))
    }
}

#[derive(Debug, Clone, Default)]
pub struct SeriesStore {
    series: BTreeMap<SeriesKey, Vec<(SimTime, f64)>>,
}

impl SeriesStore {
    pub fn new() -> Self {
        SeriesStore::default()
    }

    pub fn append(&mut self, sample: Sample) -> Result<(), TsdbError> {
        if !sample.value.is_finite() {
            return Err(TsdbError::NonFinite(sample.name));
        }
        let key = SeriesKey::new(&sample.name, sample.labels);
        let points = self.series.entry(key).or_default();
        if let Some((last, _)) = points.last() {
            if sample.timestamp <= *last {
                let last = *last;
                let name = sample.name;
                return Err(TsdbError::OutOfOrder {
                    series: name,
                    at: sample.timestamp,
                    last,
                });
            }
        }
        points.push((sample.timestamp, sample.value));
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series_count(&self) -> usize {
        self.series.len()
    }

    pub fn sample_count(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn has_metric(&self, name: &str) -> bool {
        self.series.keys().any(|k| k.name == name)
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.series.keys().map(|k| k.name.clone()).collect();
        names.dedup();
        names
    }

    pub fn get(&self, key: &SeriesKey) -> Option<&[(SimTime, f64)]> {
        self.series.get(key).map(Vec::as_slice)
    }

    /// Samples in `[t0, t1]` of every series named `name` whose labels pass
    /// `filter`. Series with no point in range are omitted.
    pub fn query_range(
        &self,
        name: &str,
        filter: &LabelFilter,
        t0: SimTime,
        t1: SimTime,
    ) -> Vec<Series> {
        self.series
            .iter()
            .filter(|(k, _)| k.name == name && filter.matches(&k.labels))
            .filter_map(|(k, pts)| {
                let lo = pts.partition_point(|(t, _)| *t < t0);
                let hi = pts.partition_point(|(t, _)| *t <= t1);
                (lo < hi).then(|| Series {
                    key: k.clone(),
                    points: pts[lo..hi].to_vec(),
                })
            })
            .collect()
    }

    pub fn all_series(&self) -> Vec<Series> {
        self.series
            .iter()
            .map(|(k, pts)| Series {
                key: k.clone(),
                points: pts.clone(),
            })
            .collect()
    }

    pub fn to_dump(&self, meta: DumpMeta) -> TsdbDump {
        let mut series: Vec<DumpSeries> = self
            .series
            .iter()
            .map(|(k, pts)| DumpSeries {
                name: k.name.clone(),
                labels: k.labels.clone(),
                points: pts.iter().map(|(t, v)| (t.as_secs_f64(), *v)).collect(),
            })
            .collect();
        series.sort_by_cached_key(|s| (s.name.clone(), serialize_labels(&s.labels)));
        TsdbDump { meta, series }
    }

    pub fn from_dump(dump: &TsdbDump) -> Result<SeriesStore, TsdbError> {
        let mut store = SeriesStore::new();
        for s in &dump.series {
            for (t_s, v) in &s.points {
                let t = SimTime::from_secs(*t_s).map_err(|e| TsdbError::Format(e.to_string()))?;
                store.append(Sample {
                    name: s.name.clone(),
                    labels: s.labels.clone(),
                    value: *v,
                    timestamp: t,
                })?;
            }
        }
        Ok(store)
    }
}

/// One PDU session as recorded in a run's dump and report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: u32,
    pub ue: u32,
    pub upf: String,
    pub ue_ip: String,
    pub established_s: f64,
    pub released_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
    #[serde(default)]
    pub sessions: Vec<SessionRecord>,
}

impl DumpMeta {
    pub fn new(scenario: &str, seed: u64, duration_s: f64) -> Self {
        DumpMeta {
            scenario: scenario.to_string(),
            seed,
            duration_s,
            overrides: BTreeMap::new(),
            sessions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpSeries {
    pub name: String,
    pub labels: Labels,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsdbDump {
    pub meta: DumpMeta,
    pub series: Vec<DumpSeries>,
}

impl TsdbDump {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("dump serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<TsdbDump, TsdbError> {
        serde_json::from_str(text).map_err(|e| TsdbError::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), TsdbError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TsdbDump, TsdbError> {
        TsdbDump::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn store(&self) -> Result<SeriesStore, TsdbError> {
        SeriesStore::from_dump(self)
    }
}

/// Seconds → ticks for whole-second scrape windows.
pub fn secs(s: u64) -> SimTime {
    SimTime(s * TICKS_PER_SECOND)
}
