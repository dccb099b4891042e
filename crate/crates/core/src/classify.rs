//! Template matching over day segments.
//!
//! Each template axis is slid over the matching block axis with a
//! z-normalized Euclidean distance. Sub-threshold minima are picked greedily
//! with an exclusion zone of half a template, then detections of different
//! templates are arbitrated by their distance-to-threshold ratio.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{format_rfc3339_us, parse_rfc3339_us, US_PER_SECOND};
use crate::dictionary::{BehaviorTemplate, Dictionary};
use crate::slicer::{Block, DaySegment};

/// Windows whose population standard deviation falls below this normalize
/// to the zero vector.
pub const ZERO_VARIANCE_STD: f64 = 1e-8;

/// Windows are processed in independent spans of this many positions. Each
/// span recomputes its running sums from scratch, which bounds drift and
/// keeps results identical for any thread count.
const SPAN: usize = 4096;

/// Squared distances below `m * REFINE_BELOW` are recomputed directly; the
/// dot-product identity loses relative precision close to an exact match.
const REFINE_BELOW: f64 = 1e-4;

/// Running standard deviations below this are recomputed with two passes so
/// the zero-variance rule agrees with the direct definition.
const RECHECK_STD_BELOW: f64 = 1e-5;

/// Population z-normalization. Near-constant input maps to all zeros.
pub fn znormalize<T: Copy + Into<f64>>(window: &[T]) -> Vec<f64> {
    let (mean, std) = mean_std(window);
    if std < ZERO_VARIANCE_STD {
        return vec![0.0; window.len()];
    }
    window.iter().map(|&v| (v.into() - mean) / std).collect()
}

fn mean_std<T: Copy + Into<f64>>(window: &[T]) -> (f64, f64) {
    if window.is_empty() {
        return (0.0, 0.0);
    }
    let n = window.len() as f64;
    let mean = window.iter().map(|&v| v.into()).sum::<f64>() / n;
    let var = window
        .iter()
        .map(|&v| {
            let d = v.into() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// One distance per window start.
pub type DistanceProfile = Vec<f64>;

/// `values[i]` is the Euclidean distance between the z-normalized window
/// `series[i..i + m]` and the z-normalized query. Empty when the series is
/// shorter than the query.
pub fn distance_profile(series: &[f32], query: &[f32]) -> DistanceProfile {
    let m = query.len();
    let n = series.len();
    if m == 0 || n < m {
        return Vec::new();
    }
    let qz = znormalize(query);
    let q = QueryStats {
        qsum: qz.iter().sum(),
        qsq: qz.iter().map(|v| v * v).sum(),
        qz,
    };
    let mut out = vec![0.0; n - m + 1];
    out.par_chunks_mut(SPAN)
        .enumerate()
        .for_each(|(k, dst)| fill_span(series, &q, k * SPAN, dst));
    out
}

struct QueryStats {
    qz: Vec<f64>,
    qsum: f64,
    qsq: f64,
}

fn fill_span(series: &[f32], q: &QueryStats, first: usize, dst: &mut [f64]) {
    let m = q.qz.len();
    let mf = m as f64;
    let anchor = f64::from(series[first]);
    let shifted: Vec<f64> = series[first..first + dst.len() + m - 1]
        .iter()
        .map(|&v| f64::from(v) - anchor)
        .collect();

    let mut s1: f64 = shifted[..m].iter().sum();
    let mut s2: f64 = shifted[..m].iter().map(|v| v * v).sum();
    let last = dst.len() - 1;
    for (w, out) in dst.iter_mut().enumerate() {
        let window = &shifted[w..w + m];
        let mut mean = s1 / mf;
        let mut std = (s2 / mf - mean * mean).max(0.0).sqrt();
        if std < RECHECK_STD_BELOW {
            (mean, std) = mean_std(window);
        }
        let d2 = if std < ZERO_VARIANCE_STD {
            q.qsq
        } else {
            let corr = (dot(window, &q.qz) - mean * q.qsum) / std;
            mf + q.qsq - 2.0 * corr
        };
        *out = if d2 < mf * REFINE_BELOW {
            direct_distance(window, &q.qz)
        } else {
            d2.max(0.0).sqrt()
        };
        if w < last {
            let (old, new) = (shifted[w], shifted[w + m]);
            s1 += new - old;
            s2 += new * new - old * old;
        }
    }
}

fn direct_distance(window: &[f64], qz: &[f64]) -> f64 {
    znormalize(window)
        .iter()
        .zip(qz)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Mean over the template's axes of the per-axis distance profiles.
pub fn multi_axis_profile(block: &Block, template: &BehaviorTemplate) -> DistanceProfile {
    let m = template.len();
    if block.len() < m || template.axes().is_empty() {
        return Vec::new();
    }
    let mut combined = vec![0.0; block.len() - m + 1];
    for (axis, data) in template.axes().iter().zip(template.data()) {
        let series = block.axis(axis.index());
        let profile = distance_profile(&series, data);
        for (c, p) in combined.iter_mut().zip(profile) {
            *c += p;
        }
    }
    let k = template.axes().len() as f64;
    for c in &mut combined {
        *c /= k;
    }
    combined
}

/// Greedy exclusion-zone selection, in acceptance order (ascending value,
/// ties toward the smaller index).
pub fn detect_ranked(profile: &[f64], threshold: f64, m: usize) -> Vec<(usize, f64)> {
    let half = m / 2;
    let mut candidates: Vec<(f64, usize)> = profile
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= threshold)
        .map(|(i, &v)| (v, i))
        .collect();
    candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut suppressed = vec![false; profile.len()];
    let mut accepted = Vec::new();
    for (v, i) in candidates {
        if suppressed[i] {
            continue;
        }
        accepted.push((i, v));
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(profile.len() - 1);
        suppressed[lo..=hi].fill(true);
    }
    accepted
}

/// Positions accepted by greedy non-maximum suppression, ascending.
pub fn detect(profile: &[f64], threshold: f64, m: usize) -> Vec<usize> {
    let mut positions: Vec<usize> = detect_ranked(profile, threshold, m)
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    positions.sort_unstable();
    positions
}

/// One classified behavior occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub start_us: i64,
    /// Length in samples.
    pub m: usize,
    pub distance: f64,
    /// `distance / threshold`, in `[0, 1]`.
    pub ratio: f64,
}

impl Detection {
    /// Time span `[start, end)` at the given rate.
    pub fn span_us(&self, rate_hz: f64) -> (i64, i64) {
        let len = (self.m as f64 * US_PER_SECOND as f64 / rate_hz).round() as i64;
        (self.start_us, self.start_us + len)
    }

    pub fn midpoint_us(&self, rate_hz: f64) -> i64 {
        let (s, e) = self.span_us(rate_hz);
        s + (e - s) / 2
    }
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("dictionary rate {dict} Hz does not match day rate {day} Hz")]
    RateMismatch { dict: f64, day: f64 },
    #[error("template {index} ({label}) has no threshold; calibrate the dictionary first")]
    ThresholdUnset { index: usize, label: String },
}

#[derive(Debug, Clone)]
struct Candidate {
    template: usize,
    start_us: i64,
    end_us: i64,
    m: usize,
    distance: f64,
    ratio: f64,
}

/// Classifies one day against every template.
///
/// (block, template) pairs run on the current rayon pool; the merge and the
/// cross-template arbitration are sequential, so the output does not depend
/// on the number of workers.
pub fn classify_day(segment: &DaySegment, dict: &Dictionary) -> Result<Vec<Detection>, ClassifyError> {
    if dict.rate_hz() != segment.rate_hz {
        return Err(ClassifyError::RateMismatch {
            dict: dict.rate_hz(),
            day: segment.rate_hz,
        });
    }
    let thresholds = dict
        .templates()
        .iter()
        .enumerate()
        .map(|(index, t)| {
            t.threshold().ok_or_else(|| ClassifyError::ThresholdUnset {
                index,
                label: t.label().to_string(),
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;

    let tasks: Vec<(usize, usize)> = segment
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, block)| {
            dict.templates()
                .iter()
                .enumerate()
                .filter(move |(_, t)| block.len() >= t.len())
                .map(move |(t, _)| (b, t))
        })
        .collect();

    let period = segment.period_us();
    let per_task: Vec<Vec<Candidate>> = tasks
        .par_iter()
        .map(|&(b, t)| {
            let block = &segment.blocks[b];
            let template = &dict.templates()[t];
            let threshold = thresholds[t];
            let m = template.len();
            let profile = multi_axis_profile(block, template);
            detect(&profile, threshold, m)
                .into_iter()
                .map(|i| {
                    let distance = profile[i];
                    let start_us = segment.sample_time_us(block, i);
                    Candidate {
                        template: t,
                        start_us,
                        end_us: start_us + (m as f64 * period).round() as i64,
                        m,
                        distance,
                        ratio: if threshold > 0.0 { distance / threshold } else { 0.0 },
                    }
                })
                .collect()
        })
        .collect();

    let mut candidates: Vec<Candidate> = per_task.into_iter().flatten().collect();
    candidates.sort_by(|a, b| {
        a.ratio
            .total_cmp(&b.ratio)
            .then(a.start_us.cmp(&b.start_us))
            .then(a.template.cmp(&b.template))
    });

    let max_span = candidates.iter().map(|c| c.end_us - c.start_us).max().unwrap_or(0);
    let mut accepted: BTreeMap<(i64, usize), Candidate> = BTreeMap::new();
    for (seq, c) in candidates.into_iter().enumerate() {
        let len = c.end_us - c.start_us;
        let conflicts = accepted
            .range((c.start_us - max_span, 0)..(c.end_us, 0))
            .any(|(_, a)| {
                let overlap = c.end_us.min(a.end_us) - c.start_us.max(a.start_us);
                let shorter = len.min(a.end_us - a.start_us);
                overlap > 0 && 2 * overlap > shorter
            });
        if !conflicts {
            accepted.insert((c.start_us, seq), c);
        }
    }

    let mut out: Vec<(i64, usize, Detection)> = accepted
        .into_values()
        .map(|c| {
            (
                c.start_us,
                c.template,
                Detection {
                    label: dict.templates()[c.template].label().to_string(),
                    start_us: c.start_us,
                    m: c.m,
                    distance: c.distance,
                    ratio: c.ratio,
                },
            )
        })
        .collect();
    out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(out.into_iter().map(|(_, _, d)| d).collect())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    label: String,
    start: String,
    samples: usize,
    distance: f64,
    ratio: f64,
}

#[derive(Debug, Error)]
pub enum DetectionFileError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {reason}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Writes detections as line-delimited JSON in the given order.
pub fn write_detections(path: impl AsRef<Path>, detections: &[Detection]) -> Result<(), DetectionFileError> {
    let path = path.as_ref();
    let io_err = |source| DetectionFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for d in detections {
        let line = DetectionLine {
            label: d.label.clone(),
            start: format_rfc3339_us(d.start_us),
            samples: d.m,
            distance: d.distance,
            ratio: d.ratio,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>, DetectionFileError> {
    let path = path.as_ref();
    let io_err = |source| DetectionFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| DetectionFileError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let raw: DetectionLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let start_us = parse_rfc3339_us(&raw.start).map_err(parse_err)?;
        out.push(Detection {
            label: raw.label,
            start_us,
            m: raw.samples,
            distance: raw.distance,
            ratio: raw.ratio,
        });
    }
    Ok(out)
}
