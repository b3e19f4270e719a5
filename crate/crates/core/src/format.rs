//! The `IRAG` index binary format.
//!
//! ```text
//! magic    4 bytes  "IRAG"
//! version  u16 LE   1
//! dim      u32 LE
//! count    u64 LE
//! count x [ id_len u16 LE | id UTF-8 | dim x f32 LE ]
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IRAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 8;

/// Records exactly as stored on disk, before any normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawIndex {
    pub dimension: usize,
    pub entries: Vec<(String, Vec<f32>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let out = self.buf.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, what)?);
        Ok(out)
    }
}

/// Parses the header only: `(dimension, count)`.
pub fn decode_header(bytes: &[u8]) -> Result<(usize, u64)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let magic: [u8; 4] = r.array("header")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes(r.array("header")?);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dimension = u32::from_le_bytes(r.array("header")?) as usize;
    if dimension == 0 {
        return Err(Error::ZeroDimension);
    }
    let count = u64::from_le_bytes(r.array("header")?);
    Ok((dimension, count))
}

pub fn decode(bytes: &[u8]) -> Result<RawIndex> {
    let (dimension, count) = decode_header(bytes)?;
    let mut r = Reader {
        buf: bytes,
        pos: HEADER_LEN,
    };
    // Each record takes at least 2 + 4 * dim bytes; never trust `count` for allocation.
    let min_record = 2 + 4 * dimension;
    let plausible = (bytes.len() - HEADER_LEN) / min_record;
    let mut entries = Vec::with_capacity((count as usize).min(plausible));
    for _ in 0..count {
        let id_len = u16::from_le_bytes(r.array("record id length")?) as usize;
        let id = core::str::from_utf8(r.take(id_len, "record id")?).map_err(|_| Error::InvalidId)?;
        if id.is_empty() {
            return Err(Error::EmptyId);
        }
        let raw = r.take(4 * dimension, "record vector")?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((String::from(id), vector));
    }
    if r.pos != bytes.len() {
        return Err(Error::TrailingBytes(count));
    }
    Ok(RawIndex { dimension, entries })
}

/// Serializes records; every vector must have length `dimension`.
pub fn encode<'a, I>(dimension: usize, records: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, &'a [f32])>,
    I::IntoIter: ExactSizeIterator,
{
    if dimension == 0 {
        return Err(Error::ZeroDimension);
    }
    let dim32 = u32::try_from(dimension).map_err(|_| Error::InvalidParam("dimension exceeds u32"))?;
    let records = records.into_iter();
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * (16 + 4 * dimension));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (id, vector) in records {
        if id.is_empty() {
            return Err(Error::EmptyId);
        }
        let id_len = u16::try_from(id.len()).map_err(|_| Error::IdTooLong(id.len()))?;
        if vector.len() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: vector.len(),
            });
        }
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}
