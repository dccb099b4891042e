//! Behavior counts and time-of-day histograms for one classified day.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::calendar::{format_rfc3339_us, US_PER_DAY};
use crate::classify::Detection;
use crate::dictionary::CANONICAL_LABELS;
use crate::slicer::{day_key, DayKey};

pub const DEFAULT_BIN_MINUTES: u32 = 60;

const MINUTES_PER_DAY: u32 = 1440;
const US_PER_MINUTE: i64 = 60_000_000;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{label} detection at {start} is not on {day}")]
    OutsideDay {
        label: String,
        start: String,
        day: String,
    },
    #[error("{label} detection at {start} has a label outside {known:?}")]
    UnknownLabel {
        label: String,
        start: String,
        known: Vec<String>,
    },
    #[error("bin width {0} min does not divide 1440")]
    BadBinWidth(u32),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            other => Err(format!("unknown format {other:?} (expected json, csv or svg)")),
        }
    }
}

/// The three behaviors every report lists, even at zero.
pub fn default_labels() -> Vec<String> {
    CANONICAL_LABELS.iter().map(|s| s.to_string()).collect()
}

/// Per-label totals in label order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorCounts {
    pub day: DayKey,
    pub utc_offset_s: i32,
    pub labels: Vec<String>,
    pub totals: Vec<u64>,
}

impl BehaviorCounts {
    pub fn get(&self, label: &str) -> Option<u64> {
        self.labels.iter().position(|l| l == label).map(|i| self.totals[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircadianHistogram {
    pub bin_minutes: u32,
    pub utc_offset_s: i32,
    pub labels: Vec<String>,
    /// `bins[b][k]` counts label `k` in local minutes
    /// `[b * bin_minutes, (b + 1) * bin_minutes)`.
    pub bins: Vec<Vec<u64>>,
}

impl CircadianHistogram {
    pub fn label_total(&self, k: usize) -> u64 {
        self.bins.iter().map(|b| b[k]).sum()
    }
}

fn label_index(labels: &[String], d: &Detection) -> Result<usize, ReportError> {
    labels
        .iter()
        .position(|l| *l == d.label)
        .ok_or_else(|| ReportError::UnknownLabel {
            label: d.label.clone(),
            start: format_rfc3339_us(d.start_us),
            known: labels.to_vec(),
        })
}

pub fn behavior_counts(
    detections: &[Detection],
    day: DayKey,
    utc_offset_s: i32,
    labels: &[String],
) -> Result<BehaviorCounts, ReportError> {
    let mut totals = vec![0u64; labels.len()];
    for d in detections {
        if day_key(d.start_us, utc_offset_s) != day {
            return Err(ReportError::OutsideDay {
                label: d.label.clone(),
                start: format_rfc3339_us(d.start_us),
                day: day.iso(),
            });
        }
        totals[label_index(labels, d)?] += 1;
    }
    Ok(BehaviorCounts {
        day,
        utc_offset_s,
        labels: labels.to_vec(),
        totals,
    })
}

/// Local minute of the day, `0..1440`.
pub fn local_minute(t_us: i64, utc_offset_s: i32) -> u32 {
    let local = t_us + i64::from(utc_offset_s) * 1_000_000;
    (local.rem_euclid(US_PER_DAY) / US_PER_MINUTE) as u32
}

/// Bins detections by the local time of day of their start.
pub fn circadian_histogram(
    detections: &[Detection],
    bin_minutes: u32,
    utc_offset_s: i32,
    labels: &[String],
) -> Result<CircadianHistogram, ReportError> {
    if bin_minutes == 0 || MINUTES_PER_DAY % bin_minutes != 0 {
        return Err(ReportError::BadBinWidth(bin_minutes));
    }
    let nbins = (MINUTES_PER_DAY / bin_minutes) as usize;
    let mut bins = vec![vec![0u64; labels.len()]; nbins];
    for d in detections {
        let k = label_index(labels, d)?;
        let b = (local_minute(d.start_us, utc_offset_s) / bin_minutes) as usize;
        bins[b][k] += 1;
    }
    Ok(CircadianHistogram {
        bin_minutes,
        utc_offset_s,
        labels: labels.to_vec(),
        bins,
    })
}

fn hhmm(minute: u32) -> String {
    format!("{:02}:{:02}", minute / 60, minute % 60)
}

pub fn render_json(counts: &BehaviorCounts, hist: &CircadianHistogram) -> String {
    let mut totals = Map::new();
    for (l, &n) in counts.labels.iter().zip(&counts.totals) {
        totals.insert(l.clone(), json!(n));
    }
    let bins: Vec<Value> = hist
        .bins
        .iter()
        .enumerate()
        .map(|(b, row)| {
            let mut obj = Map::new();
            obj.insert("start_min".into(), json!(b as u32 * hist.bin_minutes));
            for (l, &n) in hist.labels.iter().zip(row) {
                obj.insert(l.clone(), json!(n));
            }
            Value::Object(obj)
        })
        .collect();
    let doc = json!({
        "date": counts.day.iso(),
        "utc_offset_s": counts.utc_offset_s,
        "counts": totals,
        "bin_minutes": hist.bin_minutes,
        "bins": bins,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("report JSON is always serializable");
    text.push('\n');
    text
}

pub fn render_csv(hist: &CircadianHistogram) -> String {
    let mut out = String::from("bin_start_local,label,count\n");
    for (b, row) in hist.bins.iter().enumerate() {
        let start = hhmm(b as u32 * hist.bin_minutes);
        for (l, n) in hist.labels.iter().zip(row) {
            let _ = writeln!(out, "{start},{},{n}", csv_field(l));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const PANEL_W: f64 = 900.0;
const PANEL_H: f64 = 300.0;
const PLOT_X0: f64 = 60.0;
const PLOT_X1: f64 = 880.0;
const PLOT_Y0: f64 = 40.0;
const PLOT_Y1: f64 = 260.0;
const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// One 900x300 bar-chart panel per label, stacked vertically. Each bar
/// carries `data-bin` and `data-count` attributes.
pub fn render_svg(counts: &BehaviorCounts, hist: &CircadianHistogram) -> String {
    let nbins = hist.bins.len();
    let total_h = PANEL_H * hist.labels.len().max(1) as f64;
    let bar_w = (PLOT_X1 - PLOT_X0) / nbins as f64;
    let plot_h = PLOT_Y1 - PLOT_Y0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W:.0}" height="{total_h:.0}" viewBox="0 0 {PANEL_W:.0} {total_h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        "<title>Behavior frequency by local time of day, {} (UTC offset {} s)</title>",
        counts.day.iso(),
        counts.utc_offset_s
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{PANEL_W:.0}" height="{total_h:.0}" fill="#ffffff"/>"##);
    if hist.labels.is_empty() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">no behaviors</text>"#, PANEL_W / 2.0, PANEL_H / 2.0);
    }
    // Hour labels every 3 h, or every bin when bins are wider.
    let tick_every = (180 / hist.bin_minutes).max(1) as usize;
    for (k, label) in hist.labels.iter().enumerate() {
        let oy = PANEL_H * k as f64;
        let color = PALETTE[k % PALETTE.len()];
        let max = hist.bins.iter().map(|b| b[k]).max().unwrap_or(0);
        let total = counts.get(label).unwrap_or_else(|| hist.label_total(k));
        let _ = writeln!(s, r#"<g class="panel" data-label="{}" transform="translate(0,{oy:.1})">"#, xml_escape(label));
        let _ = writeln!(
            s,
            r#"<text x="{PLOT_X0:.1}" y="24.0" font-size="14" font-weight="bold">{} (total {total})</text>"#,
            xml_escape(label)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{PLOT_X0:.1}" y1="{PLOT_Y1:.1}" x2="{PLOT_X1:.1}" y2="{PLOT_Y1:.1}" stroke="#333333"/>"##
        );
        let _ = writeln!(
            s,
            r##"<line x1="{PLOT_X0:.1}" y1="{PLOT_Y0:.1}" x2="{PLOT_X0:.1}" y2="{PLOT_Y1:.1}" stroke="#333333"/>"##
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{max}</text>"#, PLOT_X0 - 6.0, PLOT_Y0 + 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">0</text>"#, PLOT_X0 - 6.0, PLOT_Y1 + 4.0);
        for (b, row) in hist.bins.iter().enumerate() {
            let n = row[k];
            let h = if max == 0 { 0.0 } else { plot_h * n as f64 / max as f64 };
            let x = PLOT_X0 + bar_w * b as f64;
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-bin="{b}" data-count="{n}" x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{color}"/>"#,
                x + bar_w * 0.1,
                PLOT_Y1 - h,
                bar_w * 0.8,
            );
            if b % tick_every == 0 {
                let _ = writeln!(
                    s,
                    r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    PLOT_Y1 + 16.0,
                    hhmm(b as u32 * hist.bin_minutes)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">local time of day</text>"#,
            (PLOT_X0 + PLOT_X1) / 2.0,
            PLOT_Y1 + 34.0
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit(
    counts: &BehaviorCounts,
    hist: &CircadianHistogram,
    format: Format,
    path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    let text = match format {
        Format::Json => render_json(counts, hist),
        Format::Csv => render_csv(hist),
        Format::Svg => render_svg(counts, hist),
    };
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}
