//! Series selection, CSV export/import and SVG line panels.

use std::fmt::Write as _;
use std::path::Path;

use super::exposition::{format_value, is_valid_label_name, is_valid_metric_name};
use super::tsdb::{LabelFilter, Series, SeriesKey, SeriesStore};
use super::{deserialize_labels, serialize_labels, Sample};
use crate::kernel::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("selection matched no series")]
    EmptySelection,
    #[error("invalid selector {0:?}: {1}")]
    BadSelector(String, String),
    #[error("invalid CSV at row {row}: {message}")]
    BadCsv { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `name` or `name{k="v",k2=v2}` with equality matchers.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub name: String,
    pub filter: LabelFilter,
}

impl Selector {
    pub fn parse(text: &str) -> Result<Selector, ExportError> {
        let bad = |m: &str| ExportError::BadSelector(text.to_string(), m.to_string());
        let text_trim = text.trim();
        let (name, rest) = match text_trim.find('{') {
            Some(i) => (&text_trim[..i], Some(&text_trim[i..])),
            None => (text_trim, None),
        };
        let name = name.trim();
        if !is_valid_metric_name(name) {
            return Err(bad("invalid metric name"));
        }
        let mut pairs = Vec::new();
        if let Some(rest) = rest {
            let inner = rest
                .strip_prefix('{')
                .and_then(|r| r.strip_suffix('}'))
                .ok_or_else(|| bad("unbalanced braces"))?;
            for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (k, v) = part.split_once('=').ok_or_else(|| bad("matcher lacks '='"))?;
                let k = k.trim();
                if !is_valid_label_name(k) {
                    return Err(bad("invalid label name"));
                }
                let v = v.trim();
                let v = v
                    .strip_prefix('"')
                    .and_then(|v| v.strip_suffix('"'))
                    .unwrap_or(v);
                pairs.push((k.to_string(), v.to_string()));
            }
        }
        Ok(Selector {
            name: name.to_string(),
            filter: LabelFilter(pairs),
        })
    }

    pub fn select(&self, store: &SeriesStore) -> Vec<Series> {
        store.query_range(
            &self.name,
            &self.filter,
            SimTime::ZERO,
            SimTime(u64::MAX),
        )
    }
}

/// A panel plots a selection either raw or as a per-second rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    pub selector: Selector,
    pub rate: bool,
}

impl PanelSpec {
    pub fn parse(text: &str) -> Result<PanelSpec, ExportError> {
        let t = text.trim();
        match t.strip_prefix("rate(").and_then(|r| r.strip_suffix(')')) {
            Some(inner) => Ok(PanelSpec {
                selector: Selector::parse(inner)?,
                rate: true,
            }),
            None => Ok(PanelSpec {
                selector: Selector::parse(t)?,
                rate: false,
            }),
        }
    }

    pub fn evaluate(&self, store: &SeriesStore) -> Vec<Series> {
        let raw = self.selector.select(store);
        if self.rate {
            raw.iter().map(per_second_rate).collect()
        } else {
            raw
        }
    }
}

/// Per-second increase between successive points, stamped at the later one.
pub fn per_second_rate(series: &Series) -> Series {
    let points = series
        .points
        .windows(2)
        .map(|w| {
            let dt = w[1].0.as_secs_f64() - w[0].0.as_secs_f64();
            (w[1].0, (w[1].1 - w[0].1) / dt)
        })
        .collect();
    Series {
        key: series.key.clone(),
        points,
    }
}

/// Writes `timestamp_s,name,labels,value` rows ordered by time, then by
/// series. Returns the row count.
pub fn export_csv(series: &[Series], path: &Path) -> Result<usize, ExportError> {
    let file = std::fs::File::create(path)?;
    write_csv(series, file)
}

pub fn write_csv<W: std::io::Write>(series: &[Series], out: W) -> Result<usize, ExportError> {
    let mut rows: Vec<(SimTime, String, String, f64)> = series
        .iter()
        .flat_map(|s| {
            let labels = serialize_labels(&s.key.labels);
            s.points
                .iter()
                .map(move |(t, v)| (*t, s.key.name.clone(), labels.clone(), *v))
        })
        .collect();
    rows.sort_by(|a, b| (a.0, &a.1, &a.2).cmp(&(b.0, &b.1, &b.2)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp_s", "name", "labels", "value"])?;
    for (t, name, labels, v) in &rows {
        w.write_record([
            format_value(t.as_secs_f64()),
            name.clone(),
            labels.clone(),
            format_value(*v),
        ])?;
    }
    w.flush()?;
    Ok(rows.len())
}

pub fn parse_csv(text: &str) -> Result<SeriesStore, ExportError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp_s", "name", "labels", "value"] {
        return Err(ExportError::BadCsv {
            row: 0,
            message: "unexpected header".into(),
        });
    }
    let mut store = SeriesStore::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let bad = |message: String| ExportError::BadCsv { row, message };
        let t: f64 = record[0].parse().map_err(|_| bad("bad timestamp".into()))?;
        let timestamp = SimTime::from_secs(t).map_err(|e| bad(e.to_string()))?;
        let value: f64 = record[3].parse().map_err(|_| bad("bad value".into()))?;
        let labels = deserialize_labels(&record[2]).map_err(bad)?;
        store
            .append(Sample {
                name: record[1].to_string(),
                labels,
                value,
                timestamp,
            })
            .map_err(|e| bad(e.to_string()))?;
    }
    Ok(store)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn legend_label(key: &SeriesKey) -> String {
    if key.labels.is_empty() {
        key.name.clone()
    } else {
        key.labels
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Standalone SVG line chart: one polyline per series on shared linear
/// axes, with a legend of label sets.
pub fn render_panel_svg_string(series: &[Series], title: &str) -> Result<String, ExportError> {
    if series.is_empty() {
        return Err(ExportError::EmptySelection);
    }
    const W: f64 = 800.0;
    const H: f64 = 340.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 90.0;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;

    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (t, v) in all {
        let x = t.as_secs_f64();
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(*v);
        y1 = y1.max(*v);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    y0 = y0.min(0.0);
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        out,
        r#"<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/></g>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph,
        TOP + ph
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 16.0,
            format_tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            format_tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#,
        LEFT + pw / 2.0,
        TOP + ph + 32.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(t, v)| format!("{:.2},{:.2}", sx(t.as_secs_f64()), sy(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let lx = LEFT + (i % 3) as f64 * (pw / 3.0);
        let ly = TOP + ph + 50.0 + (i / 3) as f64 * 14.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
            ly - 9.0,
            lx + 14.0,
            xml_escape(&legend_label(&s.key))
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if a >= 1e6 {
        format!("{:.1}M", v / 1e6)
    } else if a >= 1e3 {
        format!("{:.1}k", v / 1e3)
    } else if a >= 1.0 || a == 0.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

pub fn render_panel_svg(series: &[Series], title: &str, path: &Path) -> Result<(), ExportError> {
    let svg = render_panel_svg_string(series, title)?;
    std::fs::write(path, svg)?;
    Ok(())
}
