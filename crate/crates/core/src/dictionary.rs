//! Behavior templates cut from video-annotated intervals.
//!
//! A [`Dictionary`] is an ordered list of [`BehaviorTemplate`]s sampled at
//! one rate. Templates are verbatim copies of annotated subsequences;
//! [`calibrate_threshold`] picks each template's detection threshold by
//! maximizing F1 against the annotations of a calibration day.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{format_rfc3339_us, parse_rfc3339_us};
use crate::classify::{detect_ranked, multi_axis_profile};
use crate::slicer::DaySegment;

/// Canonical behavior labels.
pub const CANONICAL_LABELS: [&str; 3] = ["pecking", "preening", "dustbathing"];

/// Shortest template that can be z-normalized meaningfully.
pub const MIN_TEMPLATE_LEN: usize = 4;

/// Threshold used when the best calibration candidate is an exact match.
pub const MIN_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn parse(text: &str) -> Option<Axis> {
        match text {
            "x" | "X" => Some(Axis::X),
            "y" | "Y" => Some(Axis::Y),
            "z" | "Z" => Some(Axis::Z),
            _ => None,
        }
    }
}

/// Non-empty, sorted, duplicate-free set of axes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisSet(Vec<Axis>);

impl AxisSet {
    pub fn new(axes: &[Axis]) -> Option<AxisSet> {
        let mut v = axes.to_vec();
        v.sort();
        v.dedup();
        (!v.is_empty()).then_some(AxisSet(v))
    }

    /// Parses a compact spec such as `yz` or `xyz`.
    pub fn parse(text: &str) -> Option<AxisSet> {
        let axes = text
            .chars()
            .map(|c| Axis::parse(&c.to_string()))
            .collect::<Option<Vec<_>>>()?;
        if axes.len() != text.len() {
            return None;
        }
        Self::new(&axes)
    }

    pub fn as_slice(&self) -> &[Axis] {
        &self.0
    }
}

impl Default for AxisSet {
    /// Y and Z.
    fn default() -> Self {
        AxisSet(vec![Axis::Y, Axis::Z])
    }
}

impl std::ops::Deref for AxisSet {
    type Target = [Axis];
    fn deref(&self) -> &[Axis] {
        &self.0
    }
}

impl fmt::Display for AxisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            f.write_str(a.name())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationInterval {
    pub label: String,
    pub start_us: i64,
    pub end_us: i64,
}

impl AnnotationInterval {
    pub fn midpoint_us(&self) -> i64 {
        self.start_us + (self.end_us - self.start_us) / 2
    }

    pub fn contains(&self, t_us: i64) -> bool {
        self.start_us <= t_us && t_us < self.end_us
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationLine {
    label: String,
    start: String,
    end: String,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {} invalid line(s): {}", .path.display(), .errors.len(), format_line_errors(.errors))]
    Lines {
        path: PathBuf,
        errors: Vec<(usize, String)>,
    },
}

fn format_line_errors(errors: &[(usize, String)]) -> String {
    errors
        .iter()
        .map(|(line, msg)| format!("line {line}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Reads line-delimited JSON annotations in file order. Blank lines are
/// ignored; every invalid line is reported.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationInterval>, AnnotationError> {
    let path = path.as_ref();
    let io_err = |source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_annotation(&line) {
            Ok(a) => out.push(a),
            Err(e) => errors.push((i + 1, e)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(AnnotationError::Lines {
            path: path.to_path_buf(),
            errors,
        })
    }
}

fn parse_annotation(line: &str) -> Result<AnnotationInterval, String> {
    let raw: AnnotationLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.label.is_empty() {
        return Err("empty label".into());
    }
    let start_us = parse_rfc3339_us(&raw.start)?;
    let end_us = parse_rfc3339_us(&raw.end)?;
    if start_us >= end_us {
        return Err(format!("start {} is not before end {}", raw.start, raw.end));
    }
    Ok(AnnotationInterval {
        label: raw.label,
        start_us,
        end_us,
    })
}

pub fn write_annotations(
    path: impl AsRef<Path>,
    annotations: &[AnnotationInterval],
) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for a in annotations {
        let line = AnnotationLine {
            label: a.label.clone(),
            start: format_rfc3339_us(a.start_us),
            end: format_rfc3339_us(a.end_us),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// A labeled multi-axis subsequence with its detection threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorTemplate {
    label: String,
    axes: AxisSet,
    data: Vec<Vec<f32>>,
    threshold: Option<f64>,
    source: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemplateError {
    #[error("empty label")]
    EmptyLabel,
    #[error("{axes} axes but {data} data sequences")]
    AxisCount { axes: usize, data: usize },
    #[error("axis {axis} has length {len}, expected {expected}")]
    LengthMismatch {
        axis: &'static str,
        len: usize,
        expected: usize,
    },
    #[error("template length {0} is below the minimum of {MIN_TEMPLATE_LEN}")]
    TooShort(usize),
    #[error("axis {0} contains a non-finite sample")]
    NonFinite(&'static str),
    #[error("invalid threshold {0}")]
    BadThreshold(f64),
}

impl BehaviorTemplate {
    /// `data` holds one sequence per axis, in the set's order.
    pub fn new(
        label: impl Into<String>,
        axes: AxisSet,
        data: Vec<Vec<f32>>,
        threshold: Option<f64>,
        source: impl Into<String>,
    ) -> Result<BehaviorTemplate, TemplateError> {
        let label = label.into();
        if label.is_empty() {
            return Err(TemplateError::EmptyLabel);
        }
        if data.len() != axes.len() {
            return Err(TemplateError::AxisCount {
                axes: axes.len(),
                data: data.len(),
            });
        }
        let m = data[0].len();
        for (axis, seq) in axes.iter().zip(&data) {
            if seq.len() != m {
                return Err(TemplateError::LengthMismatch {
                    axis: axis.name(),
                    len: seq.len(),
                    expected: m,
                });
            }
            if seq.iter().any(|v| !v.is_finite()) {
                return Err(TemplateError::NonFinite(axis.name()));
            }
        }
        if m < MIN_TEMPLATE_LEN {
            return Err(TemplateError::TooShort(m));
        }
        if let Some(t) = threshold {
            if !(t.is_finite() && t >= 0.0) {
                return Err(TemplateError::BadThreshold(t));
            }
        }
        Ok(BehaviorTemplate {
            label,
            axes,
            data,
            threshold,
            source: source.into(),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn axes(&self) -> &AxisSet {
        &self.axes
    }

    /// Per-axis samples, parallel to [`Self::axes`].
    pub fn data(&self) -> &[Vec<f32>] {
        &self.data
    }

    pub fn axis_data(&self, axis: Axis) -> Option<&[f32]> {
        self.axes
            .iter()
            .position(|&a| a == axis)
            .map(|i| self.data[i].as_slice())
    }

    /// Template length in samples.
    pub fn len(&self) -> usize {
        self.data[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<(), TemplateError> {
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(TemplateError::BadThreshold(threshold));
        }
        self.threshold = Some(threshold);
        Ok(())
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// Ordered templates sharing one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    rate_hz: f64,
    templates: Vec<BehaviorTemplate>,
}

impl Dictionary {
    pub fn new(rate_hz: f64, templates: Vec<BehaviorTemplate>) -> Result<Dictionary, DictionaryError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(DictionaryError::Invalid {
                field: "rate_hz".into(),
                reason: format!("must be positive, got {rate_hz}"),
            });
        }
        Ok(Dictionary { rate_hz, templates })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn templates(&self) -> &[BehaviorTemplate] {
        &self.templates
    }

    pub fn templates_mut(&mut self) -> &mut [BehaviorTemplate] {
        &mut self.templates
    }

    pub fn push(&mut self, template: BehaviorTemplate) {
        self.templates.push(template);
    }

    /// Distinct labels in first-appearance order.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.templates {
            if !out.iter().any(|l| l == t.label()) {
                out.push(t.label().to_string());
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {field}: {reason}", .path.display())]
    Schema {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryDoc {
    rate_hz: f64,
    templates: Vec<TemplateDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateDoc {
    label: String,
    axes: Vec<String>,
    threshold: Option<f64>,
    source: String,
    data: BTreeMap<String, Vec<f32>>,
}

pub fn save_dictionary(dict: &Dictionary, path: impl AsRef<Path>) -> Result<(), DictionaryError> {
    let path = path.as_ref();
    let io_err = |source| DictionaryError::Io {
        path: path.to_path_buf(),
        source,
    };
    let doc = DictionaryDoc {
        rate_hz: dict.rate_hz,
        templates: dict
            .templates
            .iter()
            .map(|t| TemplateDoc {
                label: t.label.clone(),
                axes: t.axes.iter().map(|a| a.name().to_string()).collect(),
                threshold: t.threshold,
                source: t.source.clone(),
                data: t
                    .axes
                    .iter()
                    .zip(&t.data)
                    .map(|(a, d)| (a.name().to_string(), d.clone()))
                    .collect(),
            })
            .collect(),
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    serde_json::to_writer(&mut out, &doc).map_err(|e| io_err(e.into()))?;
    out.write_all(b"\n").map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary, DictionaryError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DictionaryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
    let doc: DictionaryDoc = serde_path_to_error::deserialize(&mut de).map_err(|e| DictionaryError::Schema {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        reason: e.inner().to_string(),
    })?;
    let schema = |field: String, reason: String| DictionaryError::Schema {
        path: path.to_path_buf(),
        field,
        reason,
    };
    let mut templates = Vec::with_capacity(doc.templates.len());
    for (i, t) in doc.templates.into_iter().enumerate() {
        let axes = t
            .axes
            .iter()
            .map(|a| Axis::parse(a).ok_or_else(|| schema(format!("templates[{i}].axes"), format!("unknown axis {a:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let set = AxisSet::new(&axes)
            .filter(|s| s.len() == axes.len())
            .ok_or_else(|| schema(format!("templates[{i}].axes"), "must be non-empty and duplicate-free".into()))?;
        let mut data = t.data;
        let mut seqs = Vec::with_capacity(set.len());
        for a in set.iter() {
            let seq = data
                .remove(a.name())
                .ok_or_else(|| schema(format!("templates[{i}].data.{}", a.name()), "missing".into()))?;
            seqs.push(seq);
        }
        if let Some(extra) = data.keys().next() {
            return Err(schema(
                format!("templates[{i}].data.{extra}"),
                "axis not listed in axes".into(),
            ));
        }
        let template = BehaviorTemplate::new(t.label, set, seqs, t.threshold, t.source)
            .map_err(|e| schema(format!("templates[{i}]"), e.to_string()))?;
        templates.push(template);
    }
    Dictionary::new(doc.rate_hz, templates).map_err(|e| match e {
        DictionaryError::Invalid { field, reason } => schema(field, reason),
        other => other,
    })
}

/// Why an annotation did not yield a template.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractFailure {
    #[error("outside the day")]
    OutsideSegment,
    #[error("not contained in one gap-free block")]
    SpansGap,
    #[error("only {0} samples long")]
    TooShort(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("annotation {index} ({label} {start}..{end}): {failure}")]
pub struct ExtractError {
    pub index: usize,
    pub label: String,
    pub start: String,
    pub end: String,
    pub failure: ExtractFailure,
}

/// Locates an instant range inside one block as sample indices `[i0, i1)`.
fn locate(segment: &DaySegment, start_us: i64, end_us: i64) -> Result<(usize, usize, usize), ExtractFailure> {
    let (day_start, day_end) = segment.bounds_us();
    if start_us < day_start || end_us > day_end {
        return Err(ExtractFailure::OutsideSegment);
    }
    let period = segment.period_us();
    for (b, block) in segment.blocks.iter().enumerate() {
        let block_end = block.start_us as f64 + block.len() as f64 * period;
        if start_us >= block.start_us && end_us as f64 <= block_end {
            let idx = |t: i64| (((t - block.start_us) as f64 / period).round() as usize).min(block.len());
            return Ok((b, idx(start_us), idx(end_us)));
        }
    }
    Err(ExtractFailure::SpansGap)
}

/// One result per annotation, in input order.
pub fn extract_templates(
    segment: &DaySegment,
    annotations: &[AnnotationInterval],
    axes: &AxisSet,
    source: &str,
) -> Vec<Result<BehaviorTemplate, ExtractError>> {
    annotations
        .iter()
        .enumerate()
        .map(|(index, ann)| {
            let fail = |failure| ExtractError {
                index,
                label: ann.label.clone(),
                start: format_rfc3339_us(ann.start_us),
                end: format_rfc3339_us(ann.end_us),
                failure,
            };
            let (b, i0, i1) = locate(segment, ann.start_us, ann.end_us).map_err(fail)?;
            let m = i1 - i0;
            if m < MIN_TEMPLATE_LEN {
                return Err(fail(ExtractFailure::TooShort(m)));
            }
            let samples = &segment.blocks[b].samples[i0..i1];
            let data = axes
                .iter()
                .map(|a| samples.iter().map(|s| s[a.index()]).collect())
                .collect();
            let provenance = format!(
                "{source}#{}@{}..{}",
                ann.label,
                format_rfc3339_us(ann.start_us),
                format_rfc3339_us(ann.end_us)
            );
            BehaviorTemplate::new(ann.label.clone(), axes.clone(), data, None, provenance)
                .map_err(|_| fail(ExtractFailure::TooShort(m)))
        })
        .collect()
}

/// Outcome of threshold calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Number of candidate thresholds scanned.
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrateError {
    #[error("no {0:?} annotations fall inside the day")]
    NoAnnotations(String),
    #[error("rate mismatch between template and day")]
    RateMismatch,
}

/// Scores for one threshold: detections kept are the calibration-run
/// acceptances with distance at or below it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdScore {
    pub threshold: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn f1_score(tp: usize, detections: usize, hit: usize, positives: usize) -> (f64, f64, f64) {
    let precision = if detections == 0 { 0.0 } else { tp as f64 / detections as f64 };
    let recall = if positives == 0 { 0.0 } else { hit as f64 / positives as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (f1, precision, recall)
}

struct CalibrationData {
    /// Candidate thresholds, ascending and distinct.
    candidates: Vec<f64>,
    /// Greedy acceptances at the largest candidate: (distance, intervals hit).
    accepted: Vec<(f64, Vec<usize>)>,
    positives: usize,
}

fn calibration_data(
    template: &BehaviorTemplate,
    segment: &DaySegment,
    annotations: &[AnnotationInterval],
) -> Result<CalibrationData, CalibrateError> {
    let (day_start, day_end) = segment.bounds_us();
    let labeled: Vec<&AnnotationInterval> = annotations
        .iter()
        .filter(|a| a.label == template.label() && a.start_us < day_end && a.end_us > day_start)
        .collect();
    if labeled.is_empty() {
        return Err(CalibrateError::NoAnnotations(template.label().to_string()));
    }
    let m = template.len();
    let half = m / 2;
    let period = segment.period_us();

    let profiles: Vec<Vec<f64>> = segment
        .blocks
        .iter()
        .map(|b| multi_axis_profile(b, template))
        .collect();

    // Profile value of the window centered on each annotated midpoint.
    let mut values: Vec<f64> = Vec::new();
    for ann in &labeled {
        let mid = ann.midpoint_us();
        for (block, profile) in segment.blocks.iter().zip(&profiles) {
            let block_end = block.start_us as f64 + block.len() as f64 * period;
            if profile.is_empty() || mid < block.start_us || mid as f64 >= block_end {
                continue;
            }
            let center = ((mid - block.start_us) as f64 / period).round() as usize;
            let i = center.saturating_sub(half).min(profile.len() - 1);
            values.push(profile[i]);
        }
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut candidates = values.clone();
    candidates.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut accepted = Vec::new();
    if let Some(&max) = candidates.last() {
        for (block, profile) in segment.blocks.iter().zip(&profiles) {
            for (i, v) in detect_ranked(profile, max, m) {
                let start = segment.sample_time_us(block, i);
                let mid = start + ((m as f64 * period).round() as i64) / 2;
                let hits = labeled
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.contains(mid))
                    .map(|(k, _)| k)
                    .collect();
                accepted.push((v, hits));
            }
        }
    }
    accepted.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(CalibrationData {
        candidates,
        accepted,
        positives: labeled.len(),
    })
}

fn score_candidates(data: &CalibrationData) -> Vec<ThresholdScore> {
    let mut hit_counts = vec![0usize; data.positives];
    let (mut tp, mut ndet, mut hit) = (0usize, 0usize, 0usize);
    let mut next = 0;
    data.candidates
        .iter()
        .map(|&t| {
            while next < data.accepted.len() && data.accepted[next].0 <= t {
                let hits = &data.accepted[next].1;
                ndet += 1;
                if !hits.is_empty() {
                    tp += 1;
                }
                for &k in hits {
                    if hit_counts[k] == 0 {
                        hit += 1;
                    }
                    hit_counts[k] += 1;
                }
                next += 1;
            }
            let (f1, precision, recall) = f1_score(tp, ndet, hit, data.positives);
            ThresholdScore {
                threshold: t,
                f1,
                precision,
                recall,
            }
        })
        .collect()
}

/// Every candidate threshold with its score, ascending by threshold.
pub fn threshold_scan(
    template: &BehaviorTemplate,
    segment: &DaySegment,
    annotations: &[AnnotationInterval],
) -> Result<Vec<ThresholdScore>, CalibrateError> {
    Ok(score_candidates(&calibration_data(template, segment, annotations)?))
}

/// Picks the F1-maximizing threshold for `template` on `segment`.
///
/// A detection is a true positive when its midpoint lies inside an
/// annotation with the template's label; recall counts annotations hit at
/// least once. Candidates are the distinct profile values at annotated
/// midpoints and the means of adjacent values; ties go to the smaller
/// threshold. A best candidate of exactly zero is raised to
/// [`MIN_THRESHOLD`].
pub fn calibrate_threshold(
    template: &BehaviorTemplate,
    segment: &DaySegment,
    annotations: &[AnnotationInterval],
) -> Result<Calibration, CalibrateError> {
    let data = calibration_data(template, segment, annotations)?;
    let scores = score_candidates(&data);
    let mut best: Option<ThresholdScore> = None;
    for s in scores {
        if best.map_or(true, |b| s.f1 > b.f1) {
            best = Some(s);
        }
    }
    let best = best.ok_or_else(|| CalibrateError::NoAnnotations(template.label().to_string()))?;
    Ok(Calibration {
        threshold: best.threshold.max(MIN_THRESHOLD),
        f1: best.f1,
        precision: best.precision,
        recall: best.recall,
        candidates: data.candidates.len(),
    })
}
