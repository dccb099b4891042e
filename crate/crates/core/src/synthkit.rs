//! Seeded synthetic recordings with planted behaviors and their ground truth.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Plant placement draws from that
//! generator directly; Gaussian noise uses a copy advanced by one `jump()`
//! (2^128 steps) and the Box-Muller transform.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{civil_from_days, format_rfc3339_us, parse_rfc3339_us, US_PER_DAY, US_PER_SECOND};
use crate::dictionary::{write_annotations, AnnotationInterval};
use crate::ingest::MAX_ABS_G;
use crate::slicer::DayKey;

fn default_rate() -> f64 {
    100.0
}

fn default_baseline() -> [f64; 3] {
    [0.0, -1.0, 0.0]
}

fn default_start_date() -> String {
    "2019-11-18".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    /// 1.5 s of 3 Hz spikes, mostly on Y and Z.
    SpikeTrain,
    /// 3 s of 1 Hz oscillation under a half-sine envelope.
    SmoothOscillation,
    /// 2 s multi-tone burst under a Hann window.
    BroadbandBurst,
}

impl Waveform {
    pub fn duration_s(self) -> f64 {
        match self {
            Waveform::SpikeTrain => 1.5,
            Waveform::SmoothOscillation => 3.0,
            Waveform::BroadbandBurst => 2.0,
        }
    }

    pub fn len(self, rate_hz: f64) -> usize {
        (self.duration_s() * rate_hz).round() as usize
    }

    /// Offset from the resting posture at time `t` seconds into the event.
    pub fn delta(self, t: f64) -> [f64; 3] {
        use std::f64::consts::PI;
        let d = self.duration_s();
        match self {
            Waveform::SpikeTrain => {
                let phase = (t * 3.0).fract() - 0.5;
                let pulse = (-(phase * phase) / (2.0 * 0.06 * 0.06)).exp();
                let rebound = (-((phase - 0.15) * (phase - 0.15)) / (2.0 * 0.05 * 0.05)).exp();
                [0.08 * pulse, -0.9 * pulse + 0.25 * rebound, 1.2 * pulse - 0.3 * rebound]
            }
            Waveform::SmoothOscillation => {
                let env = (PI * t / d).sin();
                let w = 2.0 * PI * t;
                [0.3 * env * w.sin(), 0.45 * env * (w + PI / 3.0).sin(), 0.5 * env * w.cos()]
            }
            Waveform::BroadbandBurst => {
                let env = 0.5 - 0.5 * (2.0 * PI * t / d).cos();
                let tone = |f: f64, p: f64| (2.0 * PI * f * t + p).sin();
                [
                    env * (0.35 * tone(2.3, 0.0) + 0.25 * tone(7.9, 1.1) + 0.15 * tone(17.0, 2.0)),
                    env * (0.4 * tone(3.7, 0.4) + 0.3 * tone(11.3, 2.5) + 0.2 * tone(5.3, 0.9)),
                    env * (0.3 * tone(4.9, 1.7) + 0.3 * tone(9.1, 0.2) + 0.2 * tone(13.7, 3.0)),
                ]
            }
        }
    }

    /// Deltas sampled at `rate_hz`.
    pub fn samples(self, rate_hz: f64) -> Vec<[f64; 3]> {
        (0..self.len(rate_hz))
            .map(|i| self.delta(i as f64 / rate_hz))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub label: String,
    pub waveform: Waveform,
    pub per_day: u32,
    /// Local hours `[from, to)` the occurrences are confined to; the whole
    /// day when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hours: Option<[f64; 2]>,
}

/// Half-open dropout interval; no rows are written inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSpec {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub days: u32,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default = "default_baseline")]
    pub baseline: [f64; 3],
    #[serde(default)]
    pub noise_sigma_g: f64,
    #[serde(default)]
    pub plants: Vec<PlantSpec>,
    #[serde(default)]
    pub gaps: Vec<GapSpec>,
    #[serde(default)]
    pub seed: u64,
    /// First local calendar day, `YYYY-MM-DD`.
    #[serde(default = "default_start_date")]
    pub start_date: String,
    /// Offset defining the local days the recording spans.
    #[serde(default)]
    pub utc_offset_s: i32,
}

impl SynthSpec {
    pub fn new(days: u32, seed: u64) -> SynthSpec {
        SynthSpec {
            days,
            rate_hz: default_rate(),
            baseline: default_baseline(),
            noise_sigma_g: 0.0,
            plants: Vec::new(),
            gaps: Vec::new(),
            seed,
            start_date: default_start_date(),
            utc_offset_s: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<SynthSpec, SynthError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| SynthError::Spec(format!("{}: {}", e.path(), e.inner())))
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub rows: u64,
    pub annotations: u64,
    pub skipped_rows: u64,
    pub first: String,
    pub last: String,
}

/// A placed occurrence, in samples from the first row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Placement {
    start: u64,
    len: u64,
    plant: usize,
}

struct Plan {
    t0_us: i64,
    period_us: i64,
    total: u64,
    gaps: Vec<(u64, u64)>,
    plants: Vec<Placement>,
    waveforms: Vec<Vec<[f64; 3]>>,
}

/// Uniform integer in `[0, n)` by rejection, free of modulo bias.
fn uniform_below(rng: &mut Xoshiro256PlusPlus, n: u64) -> u64 {
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % n;
        }
    }
}

fn unit_open(rng: &mut Xoshiro256PlusPlus) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

struct Gaussian {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl Gaussian {
    fn next(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let (u1, u2) = (unit_open(&mut self.rng), unit_open(&mut self.rng));
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * a.sin());
        r * a.cos()
    }
}

const MAX_ATTEMPTS: u32 = 10_000;

fn plan(spec: &SynthSpec) -> Result<Plan, SynthError> {
    let bad = |m: String| SynthError::Spec(m);
    if spec.days == 0 {
        return Err(bad("days must be at least 1".into()));
    }
    let period_ms = 1000.0 / spec.rate_hz;
    if !(spec.rate_hz.is_finite() && spec.rate_hz > 0.0) || (period_ms - period_ms.round()).abs() > 1e-9 || period_ms.round() < 1.0 {
        return Err(bad(format!("rate_hz {} must give a whole-millisecond sample period", spec.rate_hz)));
    }
    if !(spec.noise_sigma_g.is_finite() && spec.noise_sigma_g >= 0.0) {
        return Err(bad(format!("noise_sigma_g {} must be finite and non-negative", spec.noise_sigma_g)));
    }
    if spec.baseline.iter().any(|v| !v.is_finite() || v.abs() > MAX_ABS_G - 2.0) {
        return Err(bad(format!("baseline {:?} is outside the sensor range", spec.baseline)));
    }
    let day = DayKey::parse_iso(&spec.start_date).ok_or_else(|| bad(format!("start_date {:?} is not YYYY-MM-DD", spec.start_date)))?;
    let t0_us = day.start_us(spec.utc_offset_s);
    if t0_us < 0 {
        return Err(bad("recording would start before 1970-01-01".into()));
    }
    let period_us = period_ms.round() as i64 * 1000;
    let per_day = (US_PER_DAY / period_us) as u64;
    let total = per_day * u64::from(spec.days);

    let mut gaps = Vec::new();
    for (i, g) in spec.gaps.iter().enumerate() {
        let s = parse_rfc3339_us(&g.start).map_err(|e| bad(format!("gaps[{i}].start: {e}")))?;
        let e = parse_rfc3339_us(&g.end).map_err(|e| bad(format!("gaps[{i}].end: {e}")))?;
        if s >= e {
            return Err(bad(format!("gaps[{i}]: start is not before end")));
        }
        let to_index = |t: i64| ((t - t0_us).max(0) as u64).div_ceil(period_us as u64).min(total);
        let (lo, hi) = (to_index(s), to_index(e));
        if lo < hi {
            gaps.push((lo, hi));
        }
    }
    gaps.sort_unstable();

    let waveforms: Vec<Vec<[f64; 3]>> = spec.plants.iter().map(|p| p.waveform.samples(spec.rate_hz)).collect();
    let samples_per_hour = 3600.0 * spec.rate_hz;
    let mut windows = Vec::with_capacity(spec.plants.len());
    for (i, (p, w)) in spec.plants.iter().zip(&waveforms).enumerate() {
        if p.label.is_empty() {
            return Err(bad(format!("plants[{i}].label is empty")));
        }
        let [from, to] = p.hours.unwrap_or([0.0, 24.0]);
        if !(0.0 <= from && from < to && to <= 24.0) {
            return Err(bad(format!("plants[{i}].hours must satisfy 0 <= from < to <= 24")));
        }
        let (lo, hi) = ((from * samples_per_hour).round() as u64, (to * samples_per_hour).round() as u64);
        if hi - lo < w.len() as u64 {
            return Err(SynthError::Infeasible(format!("plants[{i}] does not fit in its hours")));
        }
        windows.push((lo, hi));
    }
    let guard = waveforms.iter().map(|w| w.len() as u64).max().unwrap_or(0);

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut plants = Vec::new();
    for d in 0..u64::from(spec.days) {
        let (day_lo, day_hi) = (d * per_day, (d + 1) * per_day);
        let blocked: u64 = gaps
            .iter()
            .map(|&(lo, hi)| hi.min(day_hi).saturating_sub(lo.max(day_lo)))
            .sum();
        let need: u64 = spec
            .plants
            .iter()
            .zip(&waveforms)
            .map(|(p, w)| u64::from(p.per_day) * (w.len() as u64 + guard))
            .sum();
        if need > per_day - blocked {
            return Err(SynthError::Infeasible(format!(
                "day {} needs {need} samples of plants and spacing but has {}",
                d + 1,
                per_day - blocked
            )));
        }
        // Occupied spans, each widened by the guard on both sides.
        let mut taken: Vec<(u64, u64)> = gaps.iter().map(|&(lo, hi)| (lo.saturating_sub(guard), hi + guard)).collect();
        for (k, (p, w)) in spec.plants.iter().zip(&waveforms).enumerate() {
            let len = w.len() as u64;
            let (lo, hi) = (day_lo + windows[k].0, day_lo + windows[k].1);
            for _ in 0..p.per_day {
                let mut attempts = 0;
                loop {
                    attempts += 1;
                    if attempts > MAX_ATTEMPTS {
                        return Err(SynthError::Infeasible(format!(
                            "could not place {} occurrence(s) of {:?} on day {} without overlap",
                            p.per_day,
                            p.label,
                            d + 1
                        )));
                    }
                    let start = lo + uniform_below(&mut rng, hi - lo - len + 1);
                    let end = start + len;
                    if taken.iter().any(|&(lo, hi)| start < hi && lo < end) {
                        continue;
                    }
                    taken.push((start.saturating_sub(guard), end + guard));
                    plants.push(Placement { start, len, plant: k });
                    break;
                }
            }
        }
    }
    plants.sort_unstable_by_key(|p| p.start);
    Ok(Plan {
        t0_us,
        period_us,
        total,
        gaps,
        plants,
        waveforms,
    })
}

/// Writes `v` with exactly four decimals.
fn push_fixed4(buf: &mut Vec<u8>, v: f64) {
    let scaled = (v * 1e4).round() as i64;
    if scaled < 0 {
        buf.push(b'-');
    }
    let a = scaled.unsigned_abs();
    let mut tmp = itoa_buf(a / 10_000);
    buf.append(&mut tmp);
    let frac = a % 10_000;
    buf.extend_from_slice(&[
        b'.',
        b'0' + (frac / 1000) as u8,
        b'0' + (frac / 100 % 10) as u8,
        b'0' + (frac / 10 % 10) as u8,
        b'0' + (frac % 10) as u8,
    ]);
}

fn itoa_buf(mut v: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(4);
    loop {
        out.push(b'0' + (v % 10) as u8);
        v /= 10;
        if v == 0 {
            break;
        }
    }
    out.reverse();
    out
}

/// `YYYY-MM-DD HH:MM:SS` for a whole second since the epoch.
fn second_prefix(sec: i64) -> [u8; 19] {
    let (y, mo, d) = civil_from_days(sec.div_euclid(86_400));
    let s = sec.rem_euclid(86_400);
    let text = format!("{y:04}-{mo:02}-{d:02} {:02}:{:02}:{:02}", s / 3600, s / 60 % 60, s % 60);
    text.as_bytes().try_into().expect("four-digit year")
}

/// Generates the CSV recording and its annotation file.
///
/// Every planted occurrence lies within one local day, at least one
/// longest-waveform length away from other occurrences and from dropouts.
/// Nothing is written when the spec is invalid or infeasible.
pub fn generate(spec: &SynthSpec, out_csv: impl AsRef<Path>, out_annotations: impl AsRef<Path>) -> Result<Summary, SynthError> {
    let plan = plan(spec)?;
    let (csv_path, ann_path) = (out_csv.as_ref(), out_annotations.as_ref());
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };

    let annotations: Vec<AnnotationInterval> = plan
        .plants
        .iter()
        .map(|p| {
            let start_us = plan.t0_us + p.start as i64 * plan.period_us;
            AnnotationInterval {
                label: spec.plants[p.plant].label.clone(),
                start_us,
                end_us: start_us + p.len as i64 * plan.period_us,
            }
        })
        .collect();

    let mut noise_rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    noise_rng.jump();
    let mut noise = Gaussian { rng: noise_rng, spare: None };
    let sigma = spec.noise_sigma_g;

    let mut out = BufWriter::with_capacity(1 << 20, File::create(csv_path).map_err(io_err(csv_path))?);
    out.write_all(b"timestamp,x,y,z\n").map_err(io_err(csv_path))?;
    let mut buf: Vec<u8> = Vec::with_capacity(1 << 16);
    let mut cached: Option<(i64, [u8; 19])> = None;
    let (mut rows, mut skipped) = (0u64, 0u64);
    let (mut first, mut last) = (None, None);
    let (mut gi, mut pi) = (0usize, 0usize);
    for g in 0..plan.total {
        while gi < plan.gaps.len() && plan.gaps[gi].1 <= g {
            gi += 1;
        }
        if gi < plan.gaps.len() && plan.gaps[gi].0 <= g {
            skipped += 1;
            continue;
        }
        while pi < plan.plants.len() && plan.plants[pi].start + plan.plants[pi].len <= g {
            pi += 1;
        }
        let mut v = spec.baseline;
        if let Some(p) = plan.plants.get(pi).filter(|p| p.start <= g) {
            let delta = plan.waveforms[p.plant][(g - p.start) as usize];
            for a in 0..3 {
                v[a] += delta[a];
            }
        }
        if sigma > 0.0 {
            for c in &mut v {
                *c += sigma * noise.next();
            }
        }

        let t = plan.t0_us + g as i64 * plan.period_us;
        first.get_or_insert(t);
        last = Some(t);
        let sec = t.div_euclid(US_PER_SECOND);
        let prefix = match cached {
            Some((s, p)) if s == sec => p,
            _ => {
                let p = second_prefix(sec);
                cached = Some((sec, p));
                p
            }
        };
        let ms = t.rem_euclid(US_PER_SECOND) / 1000;
        buf.extend_from_slice(&prefix);
        buf.extend_from_slice(&[b'.', b'0' + (ms / 100) as u8, b'0' + (ms / 10 % 10) as u8, b'0' + (ms % 10) as u8]);
        for c in v {
            buf.push(b',');
            push_fixed4(&mut buf, c.clamp(-MAX_ABS_G, MAX_ABS_G));
        }
        buf.push(b'\n');
        rows += 1;
        if buf.len() >= 60_000 {
            out.write_all(&buf).map_err(io_err(csv_path))?;
            buf.clear();
        }
    }
    out.write_all(&buf).map_err(io_err(csv_path))?;
    out.flush().map_err(io_err(csv_path))?;
    write_annotations(ann_path, &annotations).map_err(io_err(ann_path))?;

    Ok(Summary {
        rows,
        annotations: annotations.len() as u64,
        skipped_rows: skipped,
        first: first.map(format_rfc3339_us).unwrap_or_default(),
        last: last.map(format_rfc3339_us).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::load_annotations;
    use crate::ingest::open_stream;

    fn fixed4(v: f64) -> String {
        let mut b = Vec::new();
        push_fixed4(&mut b, v);
        String::from_utf8(b).unwrap()
    }

    #[test]
    fn number_formatting() {
        assert_eq!(fixed4(0.0), "0.0000");
        assert_eq!(fixed4(-1.0), "-1.0000");
        assert_eq!(fixed4(-0.00004), "0.0000");
        assert_eq!(fixed4(-0.00005), "-0.0001");
        assert_eq!(fixed4(12.34567), "12.3457");
        assert_eq!(fixed4(-0.98), "-0.9800");
        assert_eq!(&second_prefix(1_574_035_200), b"2019-11-18 00:00:00");
    }

    #[test]
    fn known_rng_output() {
        // Published xoshiro256++ outputs for the state [1, 2, 3, 4].
        let mut seed = [0u8; 32];
        for (i, w) in [1u64, 2, 3, 4].iter().enumerate() {
            seed[i * 8..i * 8 + 8].copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = Xoshiro256PlusPlus::from_seed(seed);
        assert_eq!(rng.next_u64(), 41_943_041);
        assert_eq!(rng.next_u64(), 58_720_359);
        assert_eq!(
            Xoshiro256PlusPlus::seed_from_u64(5).next_u64(),
            Xoshiro256PlusPlus::seed_from_u64(5).next_u64()
        );
    }

    #[test]
    fn baseline_rows_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::new(3, 7);
        spec.rate_hz = 1.0;
        let (csv, ann) = (dir.path().join("a.csv"), dir.path().join("a.jsonl"));
        let s = generate(&spec, &csv, &ann).unwrap();
        assert_eq!(s.rows, 3 * 86_400);
        assert_eq!(s.first, "2019-11-18T00:00:00.000000Z");
        assert_eq!(s.last, "2019-11-20T23:59:59.000000Z");
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count() as u64, s.rows + 1);
        assert_eq!(text.lines().nth(1).unwrap(), "2019-11-18 00:00:00.000,0.0000,-1.0000,0.0000");
        assert_eq!(std::fs::read_to_string(&ann).unwrap(), "");

        let csv2 = dir.path().join("b.csv");
        generate(&spec, &csv2, dir.path().join("b.jsonl")).unwrap();
        assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&csv2).unwrap());
    }

    fn planted_spec(seed: u64) -> SynthSpec {
        let mut spec = SynthSpec::new(2, seed);
        spec.rate_hz = 50.0;
        spec.noise_sigma_g = 0.05;
        spec.utc_offset_s = -8 * 3600;
        spec.plants = vec![
            PlantSpec { label: "pecking".into(), waveform: Waveform::SpikeTrain, per_day: 20, hours: None },
            PlantSpec { label: "preening".into(), waveform: Waveform::SmoothOscillation, per_day: 5, hours: Some([6.0, 9.5]) },
        ];
        spec.gaps = vec![GapSpec { start: "2019-11-18T12:00:00Z".into(), end: "2019-11-18T13:00:00Z".into() }];
        spec
    }

    #[test]
    fn plants_are_annotated_and_ingestible() {
        let dir = tempfile::tempdir().unwrap();
        let spec = planted_spec(11);
        let (csv, ann) = (dir.path().join("p.csv"), dir.path().join("p.jsonl"));
        let s = generate(&spec, &csv, &ann).unwrap();
        assert_eq!(s.annotations, 50);
        assert_eq!(s.skipped_rows, 3600 * 50);
        assert_eq!(s.rows, 2 * 86_400 * 50 - s.skipped_rows);
        let anns = load_annotations(&ann).unwrap();
        assert_eq!(anns.iter().filter(|a| a.label == "pecking").count(), 40);
        let gap = (parse_rfc3339_us("2019-11-18T12:00:00Z").unwrap(), parse_rfc3339_us("2019-11-18T13:00:00Z").unwrap());
        for w in anns.windows(2) {
            assert!(w[0].end_us < w[1].start_us);
        }
        for a in &anns {
            assert!(a.end_us <= gap.0 || a.start_us >= gap.1);
            if a.label == "preening" {
                let local_h = (a.start_us - 8 * 3_600_000_000).rem_euclid(US_PER_DAY) as f64 / 3.6e9;
                assert!((6.0..9.5).contains(&local_h), "{local_h}");
            }
            let len = a.end_us - a.start_us;
            assert!(len == 1_500_000 || len == 3_000_000);
        }

        let mut stream = open_stream(&csv, 100_000).unwrap();
        let mut n = 0;
        while let Some(chunk) = stream.next_chunk().unwrap() {
            assert!(chunk.issues.is_empty());
            n += chunk.records.len() as u64;
        }
        assert_eq!(n, s.rows);

        let mut other = spec.clone();
        other.seed = 12;
        let ann2 = dir.path().join("q.jsonl");
        generate(&other, dir.path().join("q.csv"), &ann2).unwrap();
        assert_ne!(anns, load_annotations(&ann2).unwrap());
    }

    #[test]
    fn infeasible_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::new(1, 0);
        spec.rate_hz = 1.0;
        spec.plants = vec![PlantSpec { label: "pecking".into(), waveform: Waveform::SmoothOscillation, per_day: 20_000, hours: None }];
        let csv = dir.path().join("x.csv");
        assert!(matches!(generate(&spec, &csv, dir.path().join("x.jsonl")), Err(SynthError::Infeasible(_))));
        assert!(!csv.exists());

        spec.plants[0] = PlantSpec { label: "p".into(), waveform: Waveform::SmoothOscillation, per_day: 1, hours: Some([5.0, 4.0]) };
        assert!(matches!(generate(&spec, &csv, dir.path().join("x.jsonl")), Err(SynthError::Spec(_))));
        spec.plants[0].hours = Some([5.0, 5.0005]);
        assert!(matches!(generate(&spec, &csv, dir.path().join("x.jsonl")), Err(SynthError::Infeasible(_))));

        spec.rate_hz = 300.0;
        assert!(matches!(generate(&spec, &csv, dir.path().join("x.jsonl")), Err(SynthError::Spec(_))));
    }

    #[test]
    fn spec_json_defaults() {
        let spec = SynthSpec::from_json(r#"{"days":2,"plants":[{"label":"dustbathing","waveform":"broadband_burst","per_day":3}]}"#).unwrap();
        assert_eq!(spec.rate_hz, 100.0);
        assert_eq!(spec.baseline, [0.0, -1.0, 0.0]);
        assert_eq!(spec.plants[0].waveform, Waveform::BroadbandBurst);
        let err = SynthSpec::from_json(r#"{"days":2,"plants":[{"label":"a","waveform":"wiggle","per_day":1}]}"#).unwrap_err();
        assert!(err.to_string().contains("plants[0].waveform"), "{err}");
    }

    #[test]
    fn waveform_lengths() {
        assert_eq!(Waveform::SpikeTrain.len(100.0), 150);
        assert_eq!(Waveform::SmoothOscillation.len(100.0), 300);
        assert_eq!(Waveform::BroadbandBurst.len(100.0), 200);
        for w in [Waveform::SpikeTrain, Waveform::SmoothOscillation, Waveform::BroadbandBurst] {
            let s = w.samples(100.0);
            let peak = s.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(peak > 0.2 && peak < 2.0, "{w:?} {peak}");
        }
    }
}
