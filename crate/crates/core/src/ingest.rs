//! Chunked, bounded-memory reading of `timestamp,x,y,z` accelerometer CSV.
//!
//! A [`RecordStream`] is a cursor over one file. Each call to
//! [`RecordStream::next_chunk`] consumes at most `chunk_rows` lines and
//! materializes only the records parsed from them, so resident memory does
//! not depend on the size of the input file.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::calendar::{days_from_civil, is_valid_date, US_PER_SECOND};

/// Largest accepted acceleration magnitude, in g.
pub const MAX_ABS_G: f64 = 16.0;

/// Default number of lines consumed per pull.
pub const DEFAULT_CHUNK_ROWS: usize = 1_000_000;

const EXCERPT_CHARS: usize = 80;
const TIMESTAMP_LEN: usize = 23;
const UTF8_BOM: &[u8] = b"\xEF\xBB\xBF";

/// One timestamped 3-axis acceleration measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    /// Microseconds since the Unix epoch, UTC.
    pub t_us: i64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IssueKind {
    /// The first field is not a `YYYY-MM-DD HH:MM:SS.fff` instant at or after the epoch.
    MalformedTimestamp,
    /// The line does not have exactly four comma-separated fields.
    WrongFieldCount,
    /// An acceleration field is not a finite decimal number.
    NonNumeric,
    /// An acceleration field exceeds [`MAX_ABS_G`] in magnitude.
    OutOfRange,
    /// The timestamp is earlier than the last accepted record.
    NonMonotonicTime,
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IssueKind::MalformedTimestamp => "malformed timestamp",
            IssueKind::WrongFieldCount => "wrong field count",
            IssueKind::NonNumeric => "non-numeric acceleration",
            IssueKind::OutOfRange => "acceleration out of range",
            IssueKind::NonMonotonicTime => "non-monotonic time",
        };
        f.write_str(s)
    }
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    /// 1-based line number in the file.
    pub line_no: u64,
    /// Byte offset of the start of the line.
    pub byte_offset: u64,
    pub kind: IssueKind,
    /// First 80 characters of the line.
    pub excerpt: String,
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {} (byte {}): {}: {:?}",
            self.line_no, self.byte_offset, self.kind, self.excerpt
        )
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input file not found: {}", .path.display())]
    NotFound { path: PathBuf },
    #[error("I/O error reading {} at byte {offset}: {source}", .path.display())]
    Io {
        path: PathBuf,
        offset: u64,
        #[source]
        source: io::Error,
    },
    #[error("chunk_rows must be at least 1")]
    InvalidChunkRows,
}

/// Result of one pull from a [`RecordStream`].
#[derive(Debug, Clone, Default)]
pub struct Chunk {
    pub records: Vec<SampleRecord>,
    pub issues: Vec<ParseIssue>,
    /// Line number of the first line consumed by this pull.
    pub first_line: u64,
    /// Data lines consumed; always `records.len() + issues.len()`.
    pub lines_consumed: u64,
    /// Set on the final chunk of the file.
    pub end: bool,
}

/// Single-consumer cursor over a CSV recording.
pub struct RecordStream {
    path: PathBuf,
    reader: BufReader<File>,
    chunk_rows: usize,
    offset: u64,
    next_line: u64,
    header_skipped: bool,
    last_t_us: Option<i64>,
    finished: bool,
    line_buf: Vec<u8>,
}

impl fmt::Debug for RecordStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecordStream")
            .field("path", &self.path)
            .field("chunk_rows", &self.chunk_rows)
            .field("offset", &self.offset)
            .field("next_line", &self.next_line)
            .field("header_skipped", &self.header_skipped)
            .finish()
    }
}

/// Opens `path` and positions the stream at the first data line.
///
/// Only the first line is read here. If its first field does not parse as a
/// timestamp it is treated as a header and skipped.
pub fn open_stream(path: impl AsRef<Path>, chunk_rows: usize) -> Result<RecordStream, IngestError> {
    let path = path.as_ref().to_path_buf();
    if chunk_rows == 0 {
        return Err(IngestError::InvalidChunkRows);
    }
    let file = File::open(&path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            IngestError::NotFound { path: path.clone() }
        } else {
            IngestError::Io {
                path: path.clone(),
                offset: 0,
                source,
            }
        }
    })?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let mut first = Vec::new();
    let n = reader
        .read_until(b'\n', &mut first)
        .map_err(|source| IngestError::Io {
            path: path.clone(),
            offset: 0,
            source,
        })?;

    let mut stream = RecordStream {
        path,
        reader,
        chunk_rows,
        offset: 0,
        next_line: 1,
        header_skipped: false,
        last_t_us: None,
        finished: n == 0,
        line_buf: Vec::new(),
    };
    if n == 0 {
        return Ok(stream);
    }

    let bom = if first.starts_with(UTF8_BOM) { UTF8_BOM.len() } else { 0 };
    let line = trim_terminator(&first[bom..]);
    let first_field = line.split(|&b| b == b',').next().unwrap_or_default();
    if parse_timestamp(first_field).is_none() {
        stream.header_skipped = true;
        stream.offset = n as u64;
        stream.next_line = 2;
    } else {
        stream.offset = bom as u64;
    }
    // Rewind the buffered reader to the first data line.
    let start = stream.offset;
    stream
        .reader
        .seek(SeekFrom::Start(start))
        .map_err(|source| IngestError::Io {
            path: stream.path.clone(),
            offset: start,
            source,
        })?;
    if stream.header_skipped && stream.at_eof()? {
        stream.finished = true;
    }
    Ok(stream)
}

impl RecordStream {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn chunk_rows(&self) -> usize {
        self.chunk_rows
    }

    pub fn header_skipped(&self) -> bool {
        self.header_skipped
    }

    /// Line number the next pull starts at.
    pub fn next_line(&self) -> u64 {
        self.next_line
    }

    /// Byte offset the next pull starts at.
    pub fn byte_offset(&self) -> u64 {
        self.offset
    }

    /// Pulls up to `chunk_rows` lines.
    ///
    /// Returns `None` once the file is exhausted; the last chunk returned
    /// before that has `end == true`. An empty file yields no chunks.
    pub fn next_chunk(&mut self) -> Result<Option<Chunk>, IngestError> {
        if self.finished {
            return Ok(None);
        }
        let mut chunk = Chunk {
            records: Vec::with_capacity(self.chunk_rows.min(1 << 16)),
            first_line: self.next_line,
            ..Chunk::default()
        };
        let mut eof = false;
        while (chunk.lines_consumed as usize) < self.chunk_rows {
            self.line_buf.clear();
            let n = self
                .reader
                .read_until(b'\n', &mut self.line_buf)
                .map_err(|source| IngestError::Io {
                    path: self.path.clone(),
                    offset: self.offset,
                    source,
                })?;
            if n == 0 {
                eof = true;
                break;
            }
            let line_no = self.next_line;
            let byte_offset = self.offset;
            self.next_line += 1;
            self.offset += n as u64;
            chunk.lines_consumed += 1;

            let line = trim_terminator(&self.line_buf);
            match parse_fields(line) {
                Ok(rec) => match self.last_t_us {
                    Some(last) if rec.t_us < last => chunk.issues.push(ParseIssue {
                        line_no,
                        byte_offset,
                        kind: IssueKind::NonMonotonicTime,
                        excerpt: excerpt(line),
                    }),
                    _ => {
                        self.last_t_us = Some(rec.t_us);
                        chunk.records.push(rec);
                    }
                },
                Err(kind) => chunk.issues.push(ParseIssue {
                    line_no,
                    byte_offset,
                    kind,
                    excerpt: excerpt(line),
                }),
            }
        }
        if !eof {
            eof = self.at_eof()?;
        }
        if eof {
            self.finished = true;
        }
        if chunk.lines_consumed == 0 {
            return Ok(None);
        }
        chunk.end = eof;
        Ok(Some(chunk))
    }

    fn at_eof(&mut self) -> Result<bool, IngestError> {
        let offset = self.offset;
        self.reader
            .fill_buf()
            .map(|b| b.is_empty())
            .map_err(|source| IngestError::Io {
                path: self.path.clone(),
                offset,
                source,
            })
    }
}

/// Parses one CSV line (without terminator) into a record.
///
/// The returned issue carries `line_no` but a zero byte offset; streams fill
/// in the real offset.
pub fn parse_line(text: &str, line_no: u64) -> Result<SampleRecord, ParseIssue> {
    parse_fields(text.as_bytes()).map_err(|kind| ParseIssue {
        line_no,
        byte_offset: 0,
        kind,
        excerpt: excerpt(text.as_bytes()),
    })
}

fn parse_fields(line: &[u8]) -> Result<SampleRecord, IssueKind> {
    let mut fields = line.split(|&b| b == b',');
    let (Some(ts), Some(x), Some(y), Some(z), None) = (
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
    ) else {
        return Err(IssueKind::WrongFieldCount);
    };
    let t_us = parse_timestamp(ts).ok_or(IssueKind::MalformedTimestamp)?;
    let x = parse_accel(x)?;
    let y = parse_accel(y)?;
    let z = parse_accel(z)?;
    Ok(SampleRecord { t_us, x, y, z })
}

fn parse_accel(field: &[u8]) -> Result<f64, IssueKind> {
    let text = std::str::from_utf8(field)
        .map_err(|_| IssueKind::NonNumeric)?
        .trim_matches(' ');
    let v: f64 = text.parse().map_err(|_| IssueKind::NonNumeric)?;
    if !v.is_finite() {
        return Err(IssueKind::NonNumeric);
    }
    if v.abs() > MAX_ABS_G {
        return Err(IssueKind::OutOfRange);
    }
    Ok(v)
}

/// Parses `YYYY-MM-DD HH:MM:SS.fff` as a UTC instant in microseconds.
/// Instants before the epoch are rejected.
pub(crate) fn parse_timestamp(field: &[u8]) -> Option<i64> {
    if field.len() != TIMESTAMP_LEN {
        return None;
    }
    let digits = |range: std::ops::Range<usize>| -> Option<i64> {
        field[range].iter().try_fold(0i64, |acc, &b| {
            b.is_ascii_digit().then(|| acc * 10 + i64::from(b - b'0'))
        })
    };
    if field[4] != b'-'
        || field[7] != b'-'
        || field[10] != b' '
        || field[13] != b':'
        || field[16] != b':'
        || field[19] != b'.'
    {
        return None;
    }
    let year = digits(0..4)?;
    let month = digits(5..7)? as u32;
    let day = digits(8..10)? as u32;
    let hour = digits(11..13)?;
    let minute = digits(14..16)?;
    let second = digits(17..19)?;
    let millis = digits(20..23)?;
    if !is_valid_date(year, month, day) || hour > 23 || minute > 59 || second > 59 {
        return None;
    }
    let secs = days_from_civil(year, month, day) * 86_400 + hour * 3600 + minute * 60 + second;
    let t_us = secs * US_PER_SECOND + millis * 1000;
    (t_us >= 0).then_some(t_us)
}

fn trim_terminator(mut line: &[u8]) -> &[u8] {
    if let [rest @ .., b'\n'] = line {
        line = rest;
    }
    if let [rest @ .., b'\r'] = line {
        line = rest;
    }
    line
}

fn excerpt(line: &[u8]) -> String {
    String::from_utf8_lossy(line).chars().take(EXCERPT_CHARS).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents).unwrap();
        f.flush().unwrap();
        f
    }

    fn drain(stream: &mut RecordStream) -> Vec<Chunk> {
        let mut out = Vec::new();
        while let Some(c) = stream.next_chunk().unwrap() {
            out.push(c);
        }
        out
    }

    #[test]
    fn epoch_zero() {
        let r = parse_line("1970-01-01 00:00:00.000,0,0,0", 1).unwrap();
        assert_eq!(r, SampleRecord { t_us: 0, x: 0.0, y: 0.0, z: 0.0 });
    }

    #[test]
    fn field_echo() {
        let r = parse_line("2019-11-18 00:00:00.000,0.01,-0.98,0.05", 7).unwrap();
        assert_eq!(r.t_us, 1_574_035_200_000_000);
        assert_eq!((r.x, r.y, r.z), (0.01, -0.98, 0.05));
    }

    #[test]
    fn timestamp_against_chrono() {
        // chrono is an independent calendar-to-epoch route.
        let expected = chrono::NaiveDate::from_ymd_opt(2019, 11, 18)
            .unwrap()
            .and_hms_milli_opt(12, 0, 0, 500)
            .unwrap()
            .and_utc()
            .timestamp_micros();
        assert_eq!(expected, 1_574_078_400_500_000);
        let r = parse_line("2019-11-18 12:00:00.500,0.1,0.2,0.3", 1).unwrap();
        assert_eq!(r.t_us, expected);
    }

    #[test]
    fn issue_kinds() {
        let kind = |s: &str| parse_line(s, 3).unwrap_err().kind;
        assert_eq!(kind("2019-11-18 12:00:00.000,20.0,0,0"), IssueKind::OutOfRange);
        assert_eq!(kind("2019-11-18 12:00:00.000,0,-16.5,0"), IssueKind::OutOfRange);
        assert_eq!(kind("2019-11-18 00:00:00.010,bad,0,0"), IssueKind::NonNumeric);
        assert_eq!(kind("2019-11-18 00:00:00.010,0,NaN,0"), IssueKind::NonNumeric);
        assert_eq!(kind("2019-11-18 00:00:00.010,0,0,inf"), IssueKind::NonNumeric);
        assert_eq!(kind("2019-11-18 00:00:00.010,0,0"), IssueKind::WrongFieldCount);
        assert_eq!(kind("2019-11-18 00:00:00.010,0,0,0,0"), IssueKind::WrongFieldCount);
        assert_eq!(kind(""), IssueKind::WrongFieldCount);
        assert_eq!(kind("2019-11-18 00:00:00,0,0,0"), IssueKind::MalformedTimestamp);
        assert_eq!(kind("2019-02-29 00:00:00.000,0,0,0"), IssueKind::MalformedTimestamp);
        assert_eq!(kind("2019-11-18T00:00:00.000,0,0,0"), IssueKind::MalformedTimestamp);
        assert_eq!(kind("1969-12-31 23:59:59.999,0,0,0"), IssueKind::MalformedTimestamp);
        assert!(parse_line("2019-11-18 00:00:00.010,16,-16,0", 1).is_ok());
    }

    #[test]
    fn excerpt_is_truncated() {
        let long = format!("x{}", "y".repeat(200));
        let issue = parse_line(&long, 9).unwrap_err();
        assert_eq!(issue.excerpt.chars().count(), 80);
        assert_eq!(issue.line_no, 9);
    }

    #[test]
    fn chunking_arithmetic() {
        let mut body = String::new();
        for i in 0..5 {
            body.push_str(&format!("2019-11-18 00:00:00.0{i}0,0,0,0\n"));
        }
        let f = write_tmp(body.as_bytes());
        let mut s = open_stream(f.path(), 2).unwrap();
        assert!(!s.header_skipped());
        assert_eq!(s.next_line(), 1);
        let chunks = drain(&mut s);
        let sizes: Vec<_> = chunks.iter().map(|c| c.records.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let ends: Vec<_> = chunks.iter().map(|c| c.end).collect();
        assert_eq!(ends, vec![false, false, true]);
        assert_eq!(chunks[2].first_line, 5);
        assert!(s.next_chunk().unwrap().is_none());
    }

    #[test]
    fn end_flag_when_file_divides_evenly() {
        let body = "2019-11-18 00:00:00.000,0,0,0\n2019-11-18 00:00:00.010,0,0,0\n";
        let f = write_tmp(body.as_bytes());
        let mut s = open_stream(f.path(), 2).unwrap();
        let chunks = drain(&mut s);
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].end);
    }

    #[test]
    fn header_is_skipped() {
        let body = "timestamp,x,y,z\r\n2019-11-18 00:00:00.000,0.1,0.2,0.3\r\n";
        let f = write_tmp(body.as_bytes());
        let mut s = open_stream(f.path(), 10).unwrap();
        assert!(s.header_skipped());
        assert_eq!(s.next_line(), 2);
        let c = s.next_chunk().unwrap().unwrap();
        assert_eq!(c.first_line, 2);
        assert_eq!(c.records.len(), 1);
        assert!(c.issues.is_empty());
        assert_eq!(c.records[0].z, 0.3);
    }

    #[test]
    fn bom_before_data() {
        let body = b"\xEF\xBB\xBF2019-11-18 00:00:00.000,0,0,0\n";
        let f = write_tmp(body);
        let mut s = open_stream(f.path(), 10).unwrap();
        assert!(!s.header_skipped());
        let c = s.next_chunk().unwrap().unwrap();
        assert_eq!(c.records.len(), 1);
    }

    #[test]
    fn empty_and_header_only_files_yield_nothing() {
        let f = write_tmp(b"");
        let mut s = open_stream(f.path(), 10).unwrap();
        assert!(s.next_chunk().unwrap().is_none());
        let f = write_tmp(b"timestamp,x,y,z\n");
        let mut s = open_stream(f.path(), 10).unwrap();
        assert!(s.header_skipped());
        assert!(s.next_chunk().unwrap().is_none());
    }

    #[test]
    fn missing_file() {
        let err = open_stream("/nonexistent/rec.csv", 10).unwrap_err();
        assert!(matches!(err, IngestError::NotFound { .. }));
        let f = write_tmp(b"");
        assert!(matches!(
            open_stream(f.path(), 0).unwrap_err(),
            IngestError::InvalidChunkRows
        ));
    }

    #[test]
    fn non_monotonic_lines_are_dropped_across_chunks() {
        let body = "\
2019-11-18 00:00:00.020,0,0,0
2019-11-18 00:00:00.030,0,0,0
2019-11-18 00:00:00.010,0,0,0
2019-11-18 00:00:00.030,1,0,0
oops
2019-11-18 00:00:00.040,0,0,0
";
        let f = write_tmp(body.as_bytes());
        let mut s = open_stream(f.path(), 2).unwrap();
        let chunks = drain(&mut s);
        let issues: Vec<_> = chunks.iter().flat_map(|c| c.issues.clone()).collect();
        let records: Vec<_> = chunks.iter().flat_map(|c| c.records.clone()).collect();
        assert_eq!(issues.len(), 2);
        assert_eq!(issues[0].kind, IssueKind::NonMonotonicTime);
        assert_eq!(issues[0].line_no, 3);
        assert_eq!(issues[0].byte_offset, 60);
        assert_eq!(issues[1].kind, IssueKind::WrongFieldCount);
        assert_eq!(issues[1].line_no, 5);
        assert_eq!(records.len(), 4);
        assert!(records.windows(2).all(|w| w[0].t_us <= w[1].t_us));
        let consumed: u64 = chunks.iter().map(|c| c.lines_consumed).sum();
        assert_eq!(consumed, 6);
    }

    #[test]
    fn large_file_open_reads_only_first_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"timestamp,x,y,z\n").unwrap();
        // Sparse 3.5 GB file; the body is never touched by open_stream.
        f.as_file().set_len(3_500_000_000).unwrap();
        let s = open_stream(f.path(), DEFAULT_CHUNK_ROWS).unwrap();
        assert!(s.header_skipped());
        assert_eq!(s.byte_offset(), 16);
        assert_eq!(s.chunk_rows(), DEFAULT_CHUNK_ROWS);
    }
}
