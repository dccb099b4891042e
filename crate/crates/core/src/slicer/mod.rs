//! Calendar-day partitioning of a record stream.
//!
//! [`Partitioner`] pulls chunks from a [`RecordStream`] and yields one
//! [`DaySegment`] per local calendar day as soon as a record from a later day
//! arrives. Within a day, samples are grouped into gap-free [`Block`]s.

mod dayfile;

use std::fmt;

use crate::calendar::{civil_from_days, days_from_civil, is_valid_date, US_PER_DAY, US_PER_SECOND};
use crate::ingest::{IngestError, ParseIssue, RecordStream, SampleRecord};

pub use dayfile::{day_file_name, read_day_file, write_day_file, DayFileError, MAGIC, VERSION};

pub const DEFAULT_GAP_TOLERANCE_PERIODS: f64 = 1.5;
pub const DEFAULT_RATE_HZ: f64 = 100.0;

/// Issues kept verbatim per day; the rest are only counted.
pub const MAX_KEPT_ISSUES: usize = 100;

/// Calendar date as `yyyymmdd`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DayKey(u32);

impl DayKey {
    pub fn from_ymd(year: i64, month: u32, day: u32) -> Option<DayKey> {
        if !(0..=9999).contains(&year) || !is_valid_date(year, month, day) {
            return None;
        }
        Some(DayKey(year as u32 * 10_000 + month * 100 + day))
    }

    pub fn from_yyyymmdd(v: u32) -> Option<DayKey> {
        Self::from_ymd(i64::from(v / 10_000), (v / 100) % 100, v % 100)
    }

    /// Parses `YYYY-MM-DD`.
    pub fn parse_iso(text: &str) -> Option<DayKey> {
        let mut it = text.splitn(3, '-');
        let (y, m, d) = (it.next()?, it.next()?, it.next()?);
        if y.len() != 4 || m.len() != 2 || d.len() != 2 {
            return None;
        }
        Self::from_ymd(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)
    }

    pub fn yyyymmdd(self) -> u32 {
        self.0
    }

    pub fn ymd(self) -> (i64, u32, u32) {
        (i64::from(self.0 / 10_000), (self.0 / 100) % 100, self.0 % 100)
    }

    /// Days since 1970-01-01.
    pub fn epoch_days(self) -> i64 {
        let (y, m, d) = self.ymd();
        days_from_civil(y, m, d)
    }

    /// UTC instant of local midnight at the start of this day.
    pub fn start_us(self, utc_offset_s: i32) -> i64 {
        self.epoch_days() * US_PER_DAY - i64::from(utc_offset_s) * US_PER_SECOND
    }

    pub fn iso(self) -> String {
        let (y, m, d) = self.ymd();
        format!("{y:04}-{m:02}-{d:02}")
    }
}

impl fmt::Display for DayKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08}", self.0)
    }
}

/// Local calendar date of `t_us` under a fixed UTC offset.
pub fn day_key(t_us: i64, utc_offset_s: i32) -> DayKey {
    let local = t_us + i64::from(utc_offset_s) * US_PER_SECOND;
    let (y, m, d) = civil_from_days(local.div_euclid(US_PER_DAY));
    DayKey(y as u32 * 10_000 + m * 100 + d)
}

/// A run of samples with no gap above the tolerance, implicitly spaced at the
/// nominal sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub start_us: i64,
    pub samples: Vec<[f32; 3]>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One axis of the block as a contiguous vector.
    pub fn axis(&self, axis: usize) -> Vec<f32> {
        self.samples.iter().map(|s| s[axis]).collect()
    }
}

/// All samples of one local calendar day.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySegment {
    pub day: DayKey,
    pub utc_offset_s: i32,
    pub rate_hz: f64,
    pub blocks: Vec<Block>,
    /// First or last day of a recording that does not cover the whole day.
    pub partial: bool,
}

impl DaySegment {
    pub fn sample_count(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    /// Nominal sample period in microseconds.
    pub fn period_us(&self) -> f64 {
        US_PER_SECOND as f64 / self.rate_hz
    }

    /// UTC instant of sample `index` within `block`.
    pub fn sample_time_us(&self, block: &Block, index: usize) -> i64 {
        block.start_us + (index as f64 * self.period_us()).round() as i64
    }

    /// UTC bounds `[start, end)` of the day.
    pub fn bounds_us(&self) -> (i64, i64) {
        let start = self.day.start_us(self.utc_offset_s);
        (start, start + US_PER_DAY)
    }
}

#[derive(Debug, Clone)]
pub struct SliceConfig {
    pub utc_offset_s: i32,
    pub rate_hz: f64,
    pub gap_tolerance_periods: f64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            utc_offset_s: 0,
            rate_hz: DEFAULT_RATE_HZ,
            gap_tolerance_periods: DEFAULT_GAP_TOLERANCE_PERIODS,
        }
    }
}

impl SliceConfig {
    /// Largest inter-sample spacing that keeps two samples in one block.
    pub fn max_gap_us(&self) -> f64 {
        self.gap_tolerance_periods * US_PER_SECOND as f64 / self.rate_hz
    }
}

/// One finished day plus the ingest issues attributed to it.
#[derive(Debug, Clone)]
pub struct DayOutput {
    pub segment: DaySegment,
    /// Total issues attributed to this day.
    pub issue_count: u64,
    /// The first [`MAX_KEPT_ISSUES`] of them.
    pub issues: Vec<ParseIssue>,
}

#[derive(Debug)]
struct DayBuilder {
    day: DayKey,
    day_end_us: i64,
    blocks: Vec<Block>,
    last_t_us: i64,
    issue_count: u64,
    issues: Vec<ParseIssue>,
}

/// Lazily partitions a record stream into day segments.
///
/// Issues are attributed to the day of the closest preceding valid record,
/// or to the first day if none precedes them.
pub struct Partitioner {
    stream: RecordStream,
    config: SliceConfig,
    chunk: Option<ChunkCursor>,
    pending: Option<SampleRecord>,
    current: Option<DayBuilder>,
    emitted_any: bool,
    orphan_issues: (u64, Vec<ParseIssue>),
    done: bool,
}

struct ChunkCursor {
    records: std::vec::IntoIter<SampleRecord>,
    issues: std::iter::Peekable<std::vec::IntoIter<ParseIssue>>,
    next_line: u64,
    end_line: u64,
}

enum Item {
    Record(SampleRecord),
    Issue(ParseIssue),
}

impl ChunkCursor {
    fn next_item(&mut self) -> Option<Item> {
        if self.next_line >= self.end_line {
            return None;
        }
        let line = self.next_line;
        self.next_line += 1;
        if self.issues.peek().is_some_and(|i| i.line_no == line) {
            return self.issues.next().map(Item::Issue);
        }
        self.records.next().map(Item::Record)
    }
}

/// Partitions `stream` into days. See [`Partitioner`].
pub fn partition(stream: RecordStream, config: SliceConfig) -> Partitioner {
    assert!(
        config.rate_hz.is_finite() && config.rate_hz > 0.0,
        "rate_hz must be positive"
    );
    Partitioner {
        stream,
        config,
        chunk: None,
        pending: None,
        current: None,
        emitted_any: false,
        orphan_issues: (0, Vec::new()),
        done: false,
    }
}

impl Partitioner {
    fn push_record(&mut self, rec: SampleRecord) -> Option<DaySegmentParts> {
        let key = day_key(rec.t_us, self.config.utc_offset_s);
        if self.current.as_ref().is_some_and(|b| b.day != key) {
            // The next day starts only after the caller has taken this one.
            self.pending = Some(rec);
            return self.current.take().map(|builder| DaySegmentParts {
                builder,
                is_last: false,
            });
        }
        let period = US_PER_SECOND as f64 / self.config.rate_hz;
        let max_gap = self.config.max_gap_us();
        let cur = self.current.get_or_insert_with(|| {
            let (orphan_count, orphan_issues) = std::mem::take(&mut self.orphan_issues);
            DayBuilder {
                day: key,
                day_end_us: key.start_us(self.config.utc_offset_s) + US_PER_DAY,
                blocks: Vec::new(),
                last_t_us: i64::MIN,
                issue_count: orphan_count,
                issues: orphan_issues,
            }
        });
        let sample = [rec.x as f32, rec.y as f32, rec.z as f32];
        let new_block = match cur.blocks.last() {
            None => true,
            Some(_) => (rec.t_us - cur.last_t_us) as f64 > max_gap,
        };
        if new_block {
            // Reserve for the rest of the day at the nominal rate so a full
            // day does not over-allocate through doubling.
            let expected = ((cur.day_end_us - rec.t_us) as f64 / period).ceil() as usize + 1;
            let mut samples = Vec::with_capacity(expected);
            samples.push(sample);
            cur.blocks.push(Block {
                start_us: rec.t_us,
                samples,
            });
        } else if let Some(block) = cur.blocks.last_mut() {
            block.samples.push(sample);
        }
        cur.last_t_us = rec.t_us;
        None
    }

    fn push_issue(&mut self, issue: ParseIssue) {
        let (count, kept) = match self.current.as_mut() {
            Some(cur) => (&mut cur.issue_count, &mut cur.issues),
            None => (&mut self.orphan_issues.0, &mut self.orphan_issues.1),
        };
        *count += 1;
        if kept.len() < MAX_KEPT_ISSUES {
            kept.push(issue);
        }
    }

    fn finish(&mut self, parts: DaySegmentParts) -> DayOutput {
        let DaySegmentParts { builder, is_last } = parts;
        let is_first = !self.emitted_any;
        self.emitted_any = true;
        let period = US_PER_SECOND as f64 / self.config.rate_hz;
        let day_start = builder.day.start_us(self.config.utc_offset_s);
        let first_t = builder.blocks.first().map_or(i64::MAX, |b| b.start_us);
        let covers_start = ((first_t - day_start) as f64) < period;
        let covers_end = ((builder.day_end_us - builder.last_t_us) as f64) <= period;
        let partial = (is_first || is_last) && !(covers_start && covers_end);
        let blocks = builder.blocks;
        DayOutput {
            segment: DaySegment {
                day: builder.day,
                utc_offset_s: self.config.utc_offset_s,
                rate_hz: self.config.rate_hz,
                blocks,
                partial,
            },
            issue_count: builder.issue_count,
            issues: builder.issues,
        }
    }
}

struct DaySegmentParts {
    builder: DayBuilder,
    is_last: bool,
}

impl Iterator for Partitioner {
    type Item = Result<DayOutput, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if let Some(rec) = self.pending.take() {
            let started = self.push_record(rec);
            debug_assert!(started.is_none());
        }
        loop {
            if self.chunk.is_none() {
                match self.stream.next_chunk() {
                    Err(e) => {
                        self.done = true;
                        return Some(Err(e));
                    }
                    Ok(Some(c)) => {
                        self.chunk = Some(ChunkCursor {
                            next_line: c.first_line,
                            end_line: c.first_line + c.lines_consumed,
                            records: c.records.into_iter(),
                            issues: c.issues.into_iter().peekable(),
                        });
                    }
                    Ok(None) => {
                        self.done = true;
                        let mut builder = self.current.take()?;
                        // Issues that arrived before any record belong to the only day.
                        let (n, kept) = std::mem::take(&mut self.orphan_issues);
                        builder.issue_count += n;
                        builder.issues.extend(kept);
                        builder.issues.truncate(MAX_KEPT_ISSUES);
                        return Some(Ok(self.finish(DaySegmentParts {
                            builder,
                            is_last: true,
                        })));
                    }
                }
            }
            let cursor = self.chunk.as_mut().expect("chunk loaded");
            match cursor.next_item() {
                None => self.chunk = None,
                Some(Item::Issue(issue)) => self.push_issue(issue),
                Some(Item::Record(rec)) => {
                    if let Some(parts) = self.push_record(rec) {
                        return Some(Ok(self.finish(parts)));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn us(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32, ms: u32) -> i64 {
        chrono::NaiveDate::from_ymd_opt(y, mo, d)
            .unwrap()
            .and_hms_milli_opt(h, mi, s, ms)
            .unwrap()
            .and_utc()
            .timestamp_micros()
    }

    fn csv_line(t_us: i64, v: f64) -> String {
        let dt = chrono::DateTime::from_timestamp_micros(t_us).unwrap();
        format!("{},{v},{v},{v}\n", dt.format("%Y-%m-%d %H:%M:%S%.3f"))
    }

    fn run(lines: &str, cfg: SliceConfig, chunk_rows: usize) -> Vec<DayOutput> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f.flush().unwrap();
        let stream = crate::ingest::open_stream(f.path(), chunk_rows).unwrap();
        partition(stream, cfg).map(Result::unwrap).collect()
    }

    #[test]
    fn day_key_examples() {
        assert_eq!(day_key(0, 0).yyyymmdd(), 19700101);
        let t = us(2019, 11, 18, 7, 59, 59, 990);
        assert_eq!(day_key(t, -28_800).yyyymmdd(), 20191117);
        let t = us(2019, 11, 18, 8, 0, 0, 0);
        assert_eq!(day_key(t, -28_800).yyyymmdd(), 20191118);
        assert_eq!(day_key(-1, 0).yyyymmdd(), 19691231);
    }

    #[test]
    fn day_key_strings() {
        let k = DayKey::from_ymd(2019, 11, 18).unwrap();
        assert_eq!(k.to_string(), "20191118");
        assert_eq!(k.iso(), "2019-11-18");
        assert_eq!(DayKey::parse_iso("2019-11-18"), Some(k));
        assert_eq!(DayKey::from_yyyymmdd(20191118), Some(k));
        assert_eq!(DayKey::from_yyyymmdd(20190229), None);
        assert_eq!(DayKey::parse_iso("2019-11-1"), None);
        assert_eq!(k.start_us(-28_800), us(2019, 11, 18, 8, 0, 0, 0));
    }

    #[test]
    fn midnight_boundary_splits_days() {
        let cfg = SliceConfig {
            utc_offset_s: -28_800,
            ..SliceConfig::default()
        };
        // Local 23:59:59.990 and 00:00:00.000 at UTC-8.
        let a = us(2019, 11, 19, 7, 59, 59, 990);
        let b = us(2019, 11, 19, 8, 0, 0, 0);
        let days = run(&(csv_line(a, 0.1) + &csv_line(b, 0.2)), cfg, 10);
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].segment.day.yyyymmdd(), 20191118);
        assert_eq!(days[1].segment.day.yyyymmdd(), 20191119);
        assert_eq!(days[0].segment.blocks[0].start_us, a);
        assert_eq!(days[1].segment.blocks[0].start_us, b);
        assert!(days[0].segment.partial && days[1].segment.partial);
    }

    #[test]
    fn silence_splits_blocks() {
        let t0 = us(2019, 11, 18, 12, 0, 0, 0);
        let mut text = String::new();
        for i in 0..100 {
            text += &csv_line(t0 + i * 10_000, 0.0);
        }
        let t1 = t0 + 99 * 10_000 + 5_000_000;
        for i in 0..50 {
            text += &csv_line(t1 + i * 10_000, 0.0);
        }
        let days = run(&text, SliceConfig::default(), 7);
        assert_eq!(days.len(), 1);
        let seg = &days[0].segment;
        assert_eq!(seg.blocks.len(), 2);
        assert_eq!(seg.blocks[0].len(), 100);
        assert_eq!(seg.blocks[1].len(), 50);
        assert_eq!(seg.blocks[1].start_us, t1);
    }

    #[test]
    fn one_missed_sample_does_not_split_two_do() {
        let t0 = us(2019, 11, 18, 12, 0, 0, 0);
        // 15 ms gap stays, 20 ms gap splits at 100 Hz with tolerance 1.5.
        let times = [t0, t0 + 10_000, t0 + 25_000, t0 + 45_000];
        let text: String = times.iter().map(|&t| csv_line(t, 0.0)).collect();
        let days = run(&text, SliceConfig::default(), 10);
        let lens: Vec<_> = days[0].segment.blocks.iter().map(Block::len).collect();
        assert_eq!(lens, vec![3, 1]);
    }

    #[test]
    fn issues_follow_their_day() {
        let a = us(2019, 11, 18, 23, 59, 59, 990);
        let b = us(2019, 11, 19, 0, 0, 0, 0);
        let text = format!("garbage\n{}bad line\n{}", csv_line(a, 0.0), csv_line(b, 0.0));
        let days = run(&text, SliceConfig::default(), 1);
        // "garbage" is a header (first line), "bad line" follows the day-1 record.
        assert_eq!(days[0].issue_count, 1);
        assert_eq!(days[0].issues[0].line_no, 3);
        assert_eq!(days[1].issue_count, 0);
    }

    #[test]
    fn full_day_is_not_partial() {
        let rate = 1.0;
        let cfg = SliceConfig {
            rate_hz: rate,
            ..SliceConfig::default()
        };
        let t0 = us(2019, 11, 18, 0, 0, 0, 0);
        let text: String = (0..86_400 * 2 + 10)
            .map(|i| csv_line(t0 + i * 1_000_000, 0.0))
            .collect();
        let days = run(&text, cfg, 5000);
        assert_eq!(days.len(), 3);
        assert!(!days[0].segment.partial);
        assert!(!days[1].segment.partial);
        assert!(days[2].segment.partial);
        assert_eq!(days[0].segment.sample_count(), 86_400);
        assert_eq!(days[2].segment.sample_count(), 10);
    }

    #[test]
    fn empty_stream_yields_no_days() {
        assert!(run("", SliceConfig::default(), 10).is_empty());
        assert!(run("ts,x,y,z\n", SliceConfig::default(), 10).is_empty());
    }
}
