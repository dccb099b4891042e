//! Command-line front end: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 invalid data,
//! 3 I/O, 4 damaged day file.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::calendar::parse_utc_offset;
use crate::classify::{classify_day, read_detections, write_detections, ClassifyError, Detection, DetectionFileError};
use crate::dictionary::{
    calibrate_threshold, extract_templates, load_annotations, load_dictionary, save_dictionary, AnnotationError,
    AxisSet, CalibrateError, Dictionary, DictionaryError,
};
use crate::ingest::{open_stream, IngestError, DEFAULT_CHUNK_ROWS};
use crate::report::{behavior_counts, circadian_histogram, default_labels, emit, Format, ReportError, DEFAULT_BIN_MINUTES};
use crate::slicer::{
    day_key, partition, read_day_file, write_day_file, DayFileError, DayKey, SliceConfig, DEFAULT_GAP_TOLERANCE_PERIODS,
    DEFAULT_RATE_HZ,
};
use crate::synthkit::{generate, SynthError, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fowlstream", version, about = "Slice, classify and report accelerometer recordings")]
struct Cli {
    /// JSON file with default values for flags; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a CSV recording into one binary file per local calendar day.
    Slice(SliceArgs),
    /// Cut behavior templates from annotated intervals of one day.
    Extract(ExtractArgs),
    /// Choose each template's threshold by F1 against one annotated day.
    Calibrate(CalibrateArgs),
    /// Match the dictionary against every day file in a directory.
    Classify(ClassifyArgs),
    /// Count detections per behavior and per time-of-day bin.
    Report(ReportArgs),
    /// Generate a synthetic recording with planted behaviors.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SliceArgs {
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Fixed offset defining local days, e.g. -08:00.
    #[arg(long, value_name = "±HH:MM", allow_hyphen_values = true)]
    utc_offset: Option<String>,
    #[arg(long, value_name = "N")]
    chunk_rows: Option<usize>,
    #[arg(long, value_name = "HZ")]
    rate: Option<f64>,
    /// Largest gap, in sample periods, that does not start a new block.
    #[arg(long, value_name = "F")]
    gap_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long, value_name = "FILE")]
    day: PathBuf,
    #[arg(long, value_name = "FILE")]
    annotations: PathBuf,
    #[arg(long, value_name = "FILE")]
    dict: PathBuf,
    /// Axes to keep, e.g. yz or xyz.
    #[arg(long, value_name = "AXES")]
    axes: Option<String>,
    /// Keep at most this many templates per label, in annotation order.
    #[arg(long, value_name = "N")]
    max_per_label: Option<usize>,
    /// Add to an existing dictionary instead of replacing it.
    #[arg(long)]
    append: bool,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, value_name = "FILE")]
    day: PathBuf,
    #[arg(long, value_name = "FILE")]
    annotations: PathBuf,
    #[arg(long, value_name = "FILE")]
    dict: PathBuf,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long, value_name = "DIR")]
    days: PathBuf,
    #[arg(long, value_name = "FILE")]
    dict: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_name = "FILE")]
    detections: PathBuf,
    #[arg(long, value_name = "json|csv|svg")]
    format: Format,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_name = "M")]
    bin_minutes: Option<u32>,
    #[arg(long, value_name = "±HH:MM", allow_hyphen_values = true)]
    utc_offset: Option<String>,
    /// Local day to report, YYYY-MM-DD. Required unless all detections share one day.
    #[arg(long, value_name = "DATE")]
    day: Option<String>,
    /// Take the label list from this dictionary instead of the default trio.
    #[arg(long, value_name = "FILE")]
    dict: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    out_csv: PathBuf,
    #[arg(long, value_name = "PATH")]
    out_ann: PathBuf,
}

/// Values a config file may supply. Keys match the long flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    #[serde(alias = "utc_offset")]
    utc_offset: Option<String>,
    #[serde(alias = "chunk_rows")]
    chunk_rows: Option<usize>,
    rate: Option<f64>,
    #[serde(alias = "gap_tolerance")]
    gap_tolerance: Option<f64>,
    #[serde(alias = "bin_minutes")]
    bin_minutes: Option<u32>,
    jobs: Option<usize>,
    axes: Option<String>,
}

/// Resolved run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub utc_offset_s: i32,
    pub chunk_rows: usize,
    pub rate_hz: f64,
    pub gap_tolerance_periods: f64,
    pub bin_minutes: u32,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            utc_offset_s: 0,
            chunk_rows: DEFAULT_CHUNK_ROWS,
            rate_hz: DEFAULT_RATE_HZ,
            gap_tolerance_periods: DEFAULT_GAP_TOLERANCE_PERIODS,
            bin_minutes: DEFAULT_BIN_MINUTES,
            jobs: 1,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> CliError {
        CliError {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> CliError {
        CliError::new(EXIT_USAGE, message)
    }

    fn data(message: impl Into<String>) -> CliError {
        CliError::new(EXIT_DATA, message)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let code = match e {
            IngestError::InvalidChunkRows => EXIT_USAGE,
            IngestError::NotFound { .. } | IngestError::Io { .. } => EXIT_IO,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<DayFileError> for CliError {
    fn from(e: DayFileError) -> Self {
        let code = if e.is_integrity() {
            EXIT_INTEGRITY
        } else if matches!(e, DayFileError::Io { .. }) {
            EXIT_IO
        } else {
            EXIT_DATA
        };
        CliError::new(code, e.to_string())
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        let code = match e {
            AnnotationError::Io { .. } => EXIT_IO,
            AnnotationError::Lines { .. } => EXIT_DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<DictionaryError> for CliError {
    fn from(e: DictionaryError) -> Self {
        let code = match e {
            DictionaryError::Io { .. } => EXIT_IO,
            DictionaryError::Schema { .. } | DictionaryError::Invalid { .. } => EXIT_DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ClassifyError> for CliError {
    fn from(e: ClassifyError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<CalibrateError> for CliError {
    fn from(e: CalibrateError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<DetectionFileError> for CliError {
    fn from(e: DetectionFileError) -> Self {
        let code = match e {
            DetectionFileError::Io { .. } => EXIT_IO,
            DetectionFileError::Parse { .. } => EXIT_DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        let code = match e {
            ReportError::BadBinWidth(_) => EXIT_USAGE,
            ReportError::Io { .. } => EXIT_IO,
            ReportError::OutsideDay { .. } | ReportError::UnknownLabel { .. } => EXIT_DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        let code = match e {
            SynthError::Io { .. } => EXIT_IO,
            SynthError::Spec(_) | SynthError::Infeasible(_) => EXIT_DATA,
        };
        CliError::new(code, e.to_string())
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::usage(format!("{}: {}: {}", path.display(), e.path(), e.inner())))
}

/// Flags override the config file, which overrides the defaults.
fn resolve(
    file: &ConfigFile,
    utc_offset: Option<&str>,
    chunk_rows: Option<usize>,
    rate: Option<f64>,
    gap_tolerance: Option<f64>,
    bin_minutes: Option<u32>,
    jobs: Option<usize>,
) -> Result<PipelineConfig, CliError> {
    let d = PipelineConfig::default();
    let utc_offset_s = match utc_offset.or(file.utc_offset.as_deref()) {
        Some(text) => parse_utc_offset(text).map_err(|e| CliError::usage(format!("--utc-offset: {e}")))?,
        None => d.utc_offset_s,
    };
    let cfg = PipelineConfig {
        utc_offset_s,
        chunk_rows: chunk_rows.or(file.chunk_rows).unwrap_or(d.chunk_rows),
        rate_hz: rate.or(file.rate).unwrap_or(d.rate_hz),
        gap_tolerance_periods: gap_tolerance.or(file.gap_tolerance).unwrap_or(d.gap_tolerance_periods),
        bin_minutes: bin_minutes.or(file.bin_minutes).unwrap_or(d.bin_minutes),
        jobs: jobs.or(file.jobs).unwrap_or(d.jobs),
    };
    if cfg.chunk_rows == 0 {
        return Err(CliError::usage("--chunk-rows must be at least 1"));
    }
    if !(cfg.rate_hz.is_finite() && cfg.rate_hz > 0.0) {
        return Err(CliError::usage(format!("--rate must be positive, got {}", cfg.rate_hz)));
    }
    if !(cfg.gap_tolerance_periods.is_finite() && cfg.gap_tolerance_periods >= 1.0) {
        return Err(CliError::usage(format!(
            "--gap-tolerance must be at least 1, got {}",
            cfg.gap_tolerance_periods
        )));
    }
    if cfg.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    Ok(cfg)
}

fn print_json(out: &mut impl Write, value: &serde_json::Value) -> Result<(), CliError> {
    writeln!(out, "{value}").map_err(|e| CliError::new(EXIT_IO, format!("standard output: {e}")))
}

fn cmd_slice(args: &SliceArgs, file: &ConfigFile) -> Result<(), CliError> {
    let cfg = resolve(
        file,
        args.utc_offset.as_deref(),
        args.chunk_rows,
        args.rate,
        args.gap_tolerance,
        None,
        None,
    )?;
    let started = Instant::now();
    let stream = open_stream(&args.input, cfg.chunk_rows)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    let config = SliceConfig {
        utc_offset_s: cfg.utc_offset_s,
        rate_hz: cfg.rate_hz,
        gap_tolerance_periods: cfg.gap_tolerance_periods,
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let (mut days, mut rows, mut issues) = (0u64, 0u64, 0u64);
    for day in partition(stream, config) {
        let day = day?;
        for issue in &day.issues {
            eprintln!("{}: {issue}", args.input.display());
        }
        if day.issue_count > day.issues.len() as u64 {
            eprintln!(
                "{}: {} more issue(s) on {} not shown",
                args.input.display(),
                day.issue_count - day.issues.len() as u64,
                day.segment.day.iso()
            );
        }
        let path = write_day_file(&day.segment, &args.out_dir)?;
        let n = day.segment.sample_count() as u64;
        print_json(
            &mut out,
            &json!({
                "day": day.segment.day.iso(),
                "file": path.display().to_string(),
                "rows": n,
                "blocks": day.segment.blocks.len(),
                "issues": day.issue_count,
                "partial": day.segment.partial,
            }),
        )?;
        days += 1;
        rows += n;
        issues += day.issue_count;
    }
    eprintln!(
        "sliced {rows} rows into {days} day file(s), {issues} issue(s), in {:.1} s",
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn parse_axes(text: Option<&str>) -> Result<AxisSet, CliError> {
    match text {
        None => Ok(AxisSet::default()),
        Some(t) => AxisSet::parse(t).ok_or_else(|| CliError::usage(format!("--axes {t:?}: expected letters from xyz"))),
    }
}

fn cmd_extract(args: &ExtractArgs, file: &ConfigFile) -> Result<(), CliError> {
    let axes = parse_axes(args.axes.as_deref().or(file.axes.as_deref()))?;
    if args.max_per_label == Some(0) {
        return Err(CliError::usage("--max-per-label must be at least 1"));
    }
    let segment = read_day_file(&args.day)?;
    let (day_start, day_end) = segment.bounds_us();
    let annotations: Vec<_> = load_annotations(&args.annotations)?
        .into_iter()
        .filter(|a| a.start_us < day_end && a.end_us > day_start)
        .collect();
    if annotations.is_empty() {
        return Err(CliError::data(format!(
            "{}: no annotations fall on {}",
            args.annotations.display(),
            segment.day.iso()
        )));
    }
    let source = args
        .day
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let results = extract_templates(&segment, &annotations, &axes, &source);
    let failures: Vec<String> = results
        .iter()
        .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
        .collect();
    if !failures.is_empty() {
        return Err(CliError::data(format!(
            "{} of {} annotation(s) could not be extracted, dictionary not written:\n  {}",
            failures.len(),
            results.len(),
            failures.join("\n  ")
        )));
    }

    let mut dict = if args.append && args.dict.exists() {
        let d = load_dictionary(&args.dict)?;
        if d.rate_hz() != segment.rate_hz {
            return Err(CliError::data(format!(
                "{}: dictionary rate {} Hz does not match day rate {} Hz",
                args.dict.display(),
                d.rate_hz(),
                segment.rate_hz
            )));
        }
        d
    } else {
        Dictionary::new(segment.rate_hz, Vec::new())?
    };
    let mut per_label: Vec<(String, usize)> = Vec::new();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for t in results.into_iter().flatten() {
        let slot = match per_label.iter().position(|(l, _)| l == t.label()) {
            Some(i) => i,
            None => {
                per_label.push((t.label().to_string(), 0));
                per_label.len() - 1
            }
        };
        if args.max_per_label.is_some_and(|max| per_label[slot].1 >= max) {
            continue;
        }
        per_label[slot].1 += 1;
        print_json(
            &mut out,
            &json!({"label": t.label(), "samples": t.len(), "axes": t.axes().to_string(), "source": t.source()}),
        )?;
        dict.push(t);
    }
    save_dictionary(&dict, &args.dict)?;
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let segment = read_day_file(&args.day)?;
    let annotations = load_annotations(&args.annotations)?;
    let mut dict = load_dictionary(&args.dict)?;
    if dict.rate_hz() != segment.rate_hz {
        return Err(ClassifyError::RateMismatch {
            dict: dict.rate_hz(),
            day: segment.rate_hz,
        }
        .into());
    }
    let mut lines = Vec::new();
    for (i, t) in dict.templates_mut().iter_mut().enumerate() {
        let cal = calibrate_threshold(t, &segment, &annotations)?;
        t.set_threshold(cal.threshold)
            .map_err(|e| CliError::data(format!("template {i}: {e}")))?;
        lines.push(json!({
            "index": i,
            "label": t.label(),
            "threshold": cal.threshold,
            "f1": cal.f1,
            "precision": cal.precision,
            "recall": cal.recall,
            "candidates": cal.candidates,
        }));
    }
    save_dictionary(&dict, &args.dict)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for l in &lines {
        print_json(&mut out, l)?;
    }
    Ok(())
}

fn day_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("day_") && name.ends_with(".chk") && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_classify(args: &ClassifyArgs, file: &ConfigFile) -> Result<(), CliError> {
    let cfg = resolve(file, None, None, None, None, None, args.jobs)?;
    let dict = load_dictionary(&args.dict)?;
    let files = day_files(&args.days)?;
    if files.is_empty() {
        return Err(CliError::data(format!("{}: no day_*.chk files", args.days.display())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::new(EXIT_IO, format!("cannot start {} worker(s): {e}", cfg.jobs)))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut all: Vec<Detection> = Vec::new();
    for path in &files {
        let segment = read_day_file(path)?;
        let detections = pool.install(|| classify_day(&segment, &dict))?;
        print_json(
            &mut out,
            &json!({
                "day": segment.day.iso(),
                "file": path.display().to_string(),
                "partial": segment.partial,
                "detections": detections.len(),
            }),
        )?;
        all.extend(detections);
    }
    all.sort_by(|a, b| a.start_us.cmp(&b.start_us));
    write_detections(&args.out, &all)?;
    Ok(())
}

fn cmd_report(args: &ReportArgs, file: &ConfigFile) -> Result<(), CliError> {
    let cfg = resolve(file, args.utc_offset.as_deref(), None, None, None, args.bin_minutes, None)?;
    let detections = read_detections(&args.detections)?;
    let labels = match &args.dict {
        Some(path) => load_dictionary(path)?.labels(),
        None => {
            let mut labels = default_labels();
            for d in &detections {
                if !labels.contains(&d.label) {
                    labels.push(d.label.clone());
                }
            }
            labels
        }
    };
    let day = match &args.day {
        Some(text) => DayKey::parse_iso(text).ok_or_else(|| CliError::usage(format!("--day {text:?}: expected YYYY-MM-DD")))?,
        None => {
            let mut days: Vec<DayKey> = detections.iter().map(|d| day_key(d.start_us, cfg.utc_offset_s)).collect();
            days.sort();
            days.dedup();
            match days.as_slice() {
                [one] => *one,
                [] => return Err(CliError::usage("no detections to infer the day from; pass --day")),
                many => {
                    return Err(CliError::usage(format!(
                        "detections cover {} days ({} to {}); pass --day",
                        many.len(),
                        many[0].iso(),
                        many[many.len() - 1].iso()
                    )))
                }
            }
        }
    };
    let on_day: Vec<Detection> = detections
        .into_iter()
        .filter(|d| day_key(d.start_us, cfg.utc_offset_s) == day)
        .collect();
    let hist = circadian_histogram(&on_day, cfg.bin_minutes, cfg.utc_offset_s, &labels)?;
    let counts = behavior_counts(&on_day, day, cfg.utc_offset_s, &labels)?;
    emit(&counts, &hist, args.format, &args.out)?;
    let totals: serde_json::Map<String, serde_json::Value> = counts
        .labels
        .iter()
        .zip(&counts.totals)
        .map(|(l, n)| (l.clone(), json!(n)))
        .collect();
    print_json(
        &mut io::stdout().lock(),
        &json!({"day": day.iso(), "out": args.out.display().to_string(), "counts": totals}),
    )
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.spec).map_err(|e| io_error(&args.spec, e))?;
    let mut spec = SynthSpec::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", args.spec.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let summary = generate(&spec, &args.out_csv, &args.out_ann)?;
    print_json(
        &mut io::stdout().lock(),
        &serde_json::to_value(&summary).expect("summary serializes"),
    )
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let file = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Slice(a) => cmd_slice(a, &file),
        Command::Extract(a) => cmd_extract(a, &file),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Classify(a) => cmd_classify(a, &file),
        Command::Report(a) => cmd_report(a, &file),
        Command::Synth(a) => cmd_synth(a),
    }
}
