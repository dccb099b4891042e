//! Shared helpers and independent reference implementations for the
//! integration tests. Nothing here calls into the library's numeric code.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Direct O(n*m) distance profile: every window is z-normalized from
/// scratch with two-pass population statistics.
pub fn naive_profile(series: &[f32], query: &[f32]) -> Vec<f64> {
    let m = query.len();
    if series.len() < m {
        return Vec::new();
    }
    let q = naive_znorm(query);
    (0..=series.len() - m)
        .map(|i| {
            let w = naive_znorm(&series[i..i + m]);
            w.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .collect()
}

fn naive_znorm(x: &[f32]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|&v| (v as f64 - mean) / std).collect()
}

/// Literal greedy suppression: scan for the smallest live value, accept,
/// kill its neighborhood, repeat.
pub fn naive_nms(profile: &[f64], threshold: f64, m: usize) -> Vec<usize> {
    let half = m / 2;
    let mut live = vec![true; profile.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..profile.len() {
            if live[i] && profile[i] <= threshold && best.map_or(true, |b| profile[i] < profile[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        out.push(b);
        for j in b.saturating_sub(half)..=(b + half).min(profile.len() - 1) {
            live[j] = false;
        }
    }
    out.sort_unstable();
    out
}

/// Relative error with an absolute floor near zero.
pub fn rel_err(fast: f64, reference: f64) -> f64 {
    (fast - reference).abs() / reference.abs().max(1e-3)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fowlstream")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn fowlstream")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "fowlstream {args:?} exited {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Plant spec JSON for the three canonical behaviors.
pub fn trio_spec(days: u32, sigma: f64, seed: u64, per_day: u32, offset_s: i32) -> String {
    format!(
        r#"{{"days":{days},"noise_sigma_g":{sigma},"seed":{seed},"utc_offset_s":{offset_s},"plants":[
{{"label":"pecking","waveform":"spike_train","per_day":{per_day}}},
{{"label":"preening","waveform":"smooth_oscillation","per_day":{per_day}}},
{{"label":"dustbathing","waveform":"broadband_burst","per_day":{per_day}}}]}}"#
    )
}
