//! CHKDAY01 day files.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0..8    magic "CHKDAY01"
//! 8..10   version u16 = 1
//! 10      channel count u8 = 3
//! 11      flags u8, bit 0 = partial day
//! 12..20  rate_hz f64
//! 20..24  yyyymmdd u32
//! 24..28  utc_offset_s i32
//! 28..32  block_count u32
//! blocks  start_us i64, sample_count u64, sample_count * (x, y, z) f32
//! trailer CRC-32 (IEEE, reflected) of bytes 8..end of last block
//! ```
//!
//! Files are written to a temporary sibling and renamed into place. Reading
//! is streaming, so a day is never held twice in memory.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crc32fast::Hasher;
use thiserror::Error;

use super::{Block, DayKey, DaySegment};

pub const MAGIC: &[u8; 8] = b"CHKDAY01";
pub const VERSION: u16 = 1;
const CHANNELS: u8 = 3;
const FLAG_PARTIAL: u8 = 0b1;
#[cfg(test)]
const HEADER_LEN: u64 = 32;
#[cfg(test)]
const BLOCK_HEADER_LEN: u64 = 16;
const SAMPLE_LEN: u64 = 12;
const CRC_LEN: u64 = 4;

#[derive(Debug, Error)]
pub enum DayFileError {
    #[error("{}: not a CHKDAY01 file (bad magic)", .0.display())]
    BadMagic(PathBuf),
    #[error("{}: unsupported format version {version}", .path.display())]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("{}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})", .path.display())]
    ChecksumMismatch {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },
    #[error("{}: file truncated", .0.display())]
    TruncatedFile(PathBuf),
    #[error("{}: malformed day file: {reason}", .path.display())]
    Malformed { path: PathBuf, reason: String },
    #[error("refusing to write day {0} with no blocks")]
    EmptySegment(DayKey),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl DayFileError {
    /// Whether the error indicates a damaged or foreign file rather than an
    /// environment failure.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            DayFileError::BadMagic(_)
                | DayFileError::UnsupportedVersion { .. }
                | DayFileError::ChecksumMismatch { .. }
                | DayFileError::TruncatedFile(_)
                | DayFileError::Malformed { .. }
        )
    }
}

pub fn day_file_name(day: DayKey) -> String {
    format!("day_{day}.chk")
}

struct CrcWriter<W> {
    inner: W,
    hasher: Hasher,
}

impl<W: Write> CrcWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)
    }
}

/// Writes `segment` to `dir/day_<yyyymmdd>.chk`, replacing any existing file
/// atomically.
pub fn write_day_file(segment: &DaySegment, dir: impl AsRef<Path>) -> Result<PathBuf, DayFileError> {
    if segment.blocks.is_empty() {
        return Err(DayFileError::EmptySegment(segment.day));
    }
    let dir = dir.as_ref();
    let path = dir.join(day_file_name(segment.day));
    let io_err = |source| DayFileError::Io {
        path: path.clone(),
        source,
    };
    let tmp = tempfile::Builder::new()
        .prefix(".day_")
        .suffix(".tmp")
        .tempfile_in(dir)
        .map_err(io_err)?;

    let mut out = BufWriter::with_capacity(1 << 20, tmp.as_file());
    out.write_all(MAGIC).map_err(io_err)?;
    let mut w = CrcWriter {
        inner: out,
        hasher: Hasher::new(),
    };
    let flags = if segment.partial { FLAG_PARTIAL } else { 0 };
    let block_count = u32::try_from(segment.blocks.len()).expect("block count fits u32");
    (|| -> io::Result<()> {
        w.put(&VERSION.to_le_bytes())?;
        w.put(&[CHANNELS, flags])?;
        w.put(&segment.rate_hz.to_le_bytes())?;
        w.put(&segment.day.yyyymmdd().to_le_bytes())?;
        w.put(&segment.utc_offset_s.to_le_bytes())?;
        w.put(&block_count.to_le_bytes())?;
        let mut buf = Vec::with_capacity(64 * 1024 * SAMPLE_LEN as usize);
        for block in &segment.blocks {
            w.put(&block.start_us.to_le_bytes())?;
            w.put(&(block.samples.len() as u64).to_le_bytes())?;
            for piece in block.samples.chunks(64 * 1024) {
                buf.clear();
                for s in piece {
                    for v in s {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                w.put(&buf)?;
            }
        }
        let crc = w.hasher.clone().finalize();
        w.inner.write_all(&crc.to_le_bytes())?;
        w.inner.flush()
    })()
    .map_err(io_err)?;
    drop(w);
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(&path).map_err(|e| io_err(e.error))?;
    Ok(path)
}

struct CrcReader<R> {
    inner: R,
    hasher: Hasher,
    remaining: u64,
    path: PathBuf,
}

impl<R: Read> CrcReader<R> {
    fn take(&mut self, buf: &mut [u8]) -> Result<(), DayFileError> {
        if (buf.len() as u64) > self.remaining {
            return Err(DayFileError::TruncatedFile(self.path.clone()));
        }
        self.inner.read_exact(buf).map_err(|source| {
            if source.kind() == io::ErrorKind::UnexpectedEof {
                DayFileError::TruncatedFile(self.path.clone())
            } else {
                DayFileError::Io {
                    path: self.path.clone(),
                    source,
                }
            }
        })?;
        self.remaining -= buf.len() as u64;
        self.hasher.update(buf);
        Ok(())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DayFileError> {
        let mut b = [0u8; N];
        self.take(&mut b)?;
        Ok(b)
    }
}

/// Reads and verifies a day file.
pub fn read_day_file(path: impl AsRef<Path>) -> Result<DaySegment, DayFileError> {
    let path = path.as_ref().to_path_buf();
    let io_err = |source| DayFileError::Io {
        path: path.clone(),
        source,
    };
    let file = File::open(&path).map_err(io_err)?;
    let len = file.metadata().map_err(io_err)?.len();
    let mut reader = BufReader::with_capacity(1 << 20, file);

    let mut magic = [0u8; 8];
    if len < MAGIC.len() as u64 {
        let mut head = Vec::new();
        reader.read_to_end(&mut head).map_err(io_err)?;
        return Err(if MAGIC.starts_with(&head) {
            DayFileError::TruncatedFile(path)
        } else {
            DayFileError::BadMagic(path)
        });
    }
    reader.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(DayFileError::BadMagic(path));
    }
    let malformed = |reason: String| DayFileError::Malformed {
        path: path.clone(),
        reason,
    };

    // `remaining` counts every byte after the magic, trailer included.
    let mut r = CrcReader {
        inner: reader,
        hasher: Hasher::new(),
        remaining: len - MAGIC.len() as u64,
        path: path.clone(),
    };
    let version = u16::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(DayFileError::UnsupportedVersion { path, version });
    }
    let [channels, flags] = r.array()?;
    let rate_hz = f64::from_le_bytes(r.array()?);
    let yyyymmdd = u32::from_le_bytes(r.array()?);
    let utc_offset_s = i32::from_le_bytes(r.array()?);
    let block_count = u32::from_le_bytes(r.array()?);

    let mut blocks = Vec::new();
    for _ in 0..block_count {
        let start_us = i64::from_le_bytes(r.array()?);
        let count = u64::from_le_bytes(r.array()?);
        if count
            .checked_mul(SAMPLE_LEN)
            .map_or(true, |b| b.saturating_add(CRC_LEN) > r.remaining)
        {
            return Err(DayFileError::TruncatedFile(path));
        }
        let mut samples = Vec::with_capacity(count as usize);
        let mut buf = vec![0u8; (64 * 1024 * SAMPLE_LEN) as usize];
        let mut left = count as usize;
        while left > 0 {
            let n = left.min(64 * 1024);
            let bytes = &mut buf[..n * SAMPLE_LEN as usize];
            r.take(bytes)?;
            samples.extend(bytes.chunks_exact(SAMPLE_LEN as usize).map(|c| {
                let f = |i: usize| f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().unwrap());
                [f(0), f(1), f(2)]
            }));
            left -= n;
        }
        blocks.push(Block { start_us, samples });
    }
    if r.remaining < CRC_LEN {
        return Err(DayFileError::TruncatedFile(path));
    }
    if r.remaining > CRC_LEN {
        return Err(malformed(format!(
            "{} trailing bytes after last block",
            r.remaining - CRC_LEN
        )));
    }
    let computed = r.hasher.clone().finalize();
    let mut stored = [0u8; 4];
    r.inner.read_exact(&mut stored).map_err(|source| {
        if source.kind() == io::ErrorKind::UnexpectedEof {
            DayFileError::TruncatedFile(path.clone())
        } else {
            io_err(source)
        }
    })?;
    let stored = u32::from_le_bytes(stored);
    if stored != computed {
        return Err(DayFileError::ChecksumMismatch {
            path,
            stored,
            computed,
        });
    }

    // Checksummed content; remaining checks are structural.
    if channels != CHANNELS {
        return Err(malformed(format!("channel count {channels}, expected 3")));
    }
    if flags & !FLAG_PARTIAL != 0 {
        return Err(malformed(format!("reserved flag bits set: {flags:#04x}")));
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(malformed(format!("invalid rate {rate_hz}")));
    }
    let day = DayKey::from_yyyymmdd(yyyymmdd)
        .ok_or_else(|| malformed(format!("invalid date {yyyymmdd}")))?;
    if blocks.iter().any(|b| b.samples.is_empty()) {
        return Err(malformed("empty block".into()));
    }
    if blocks.windows(2).any(|w| w[1].start_us <= w[0].start_us) {
        return Err(malformed("blocks out of order".into()));
    }
    Ok(DaySegment {
        day,
        utc_offset_s,
        rate_hz,
        blocks,
        partial: flags & FLAG_PARTIAL != 0,
    })
}
