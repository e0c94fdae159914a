//! Length-prefixed binary container used for every persisted artifact.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        [u8; 4]
//! version      u32
//! header_len   u32
//! header       header_len × u32
//! array_count  u32
//! arrays       array_count × (len: u64, len × f64)
//! crc32        u32   (IEEE, over every preceding byte)
//! ```
//!
//! The meaning of the header words is fixed per magic. Flow checkpoints start
//! with `D, M, layer count`; null-sample caches with `N, K, j`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const MAGIC_FLOW: [u8; 4] = *b"FSFL";
pub const MAGIC_NULLS: [u8; 4] = *b"FSNS";
pub const MAGIC_LASSO: [u8; 4] = *b"FSLA";
pub const MAGIC_FOREST: [u8; 4] = *b"FSRF";
pub const MAGIC_MLP: [u8; 4] = *b"FSNN";

/// Upper bound on a single array; rejects absurd lengths in corrupt input
/// before any allocation happens.
const MAX_ARRAY_LEN: u64 = 1 << 32;
const MAX_HEADER_LEN: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub version: u32,
    pub header: Vec<u32>,
    pub arrays: Vec<Vec<f64>>,
}

impl Container {
    pub fn new(magic: [u8; 4]) -> Self {
        Container {
            magic,
            version: FORMAT_VERSION,
            header: Vec::new(),
            arrays: Vec::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload: usize = self.arrays.iter().map(|a| 8 + 8 * a.len()).sum();
        let mut out = Vec::with_capacity(20 + 4 * self.header.len() + payload);
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        for h in &self.header {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 4 + 4 + 4 {
            return Err(Error::format("container", "truncated: shorter than the fixed header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::format(
                "container",
                format!("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"),
            ));
        }

        let mut r = Reader { buf: body, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format("container", format!("unsupported format version {version}")));
        }
        let header_len = r.u32()?;
        if header_len > MAX_HEADER_LEN {
            return Err(Error::format("container", format!("header length {header_len} too large")));
        }
        let mut header = Vec::with_capacity(header_len.min(1024) as usize);
        for _ in 0..header_len {
            header.push(r.u32()?);
        }
        let count = r.u32()?;
        let mut arrays = Vec::new();
        for idx in 0..count {
            let len = r.u64()?;
            if len > MAX_ARRAY_LEN || len.saturating_mul(8) > (r.remaining() as u64) {
                return Err(Error::format(
                    "container",
                    format!("array {idx} declares {len} values but only {} bytes remain", r.remaining()),
                ));
            }
            let raw = r.take(len as usize * 8)?;
            arrays.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
        }
        if r.remaining() != 0 {
            return Err(Error::format("container", format!("{} trailing bytes", r.remaining())));
        }
        Ok(Container {
            magic,
            version,
            header,
            arrays,
        })
    }

    /// Decode and check the magic in one step.
    pub fn decode_expecting(bytes: &[u8], magic: [u8; 4]) -> Result<Self> {
        let c = Self::decode(bytes)?;
        if c.magic != magic {
            return Err(Error::format(
                "container",
                format!(
                    "expected magic {:?}, found {:?}",
                    String::from_utf8_lossy(&magic),
                    String::from_utf8_lossy(&c.magic)
                ),
            ));
        }
        Ok(c)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let bytes = self.encode();
        let tmp = path.with_extension("partial");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read_from(path: &Path, magic: [u8; 4]) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode_expecting(&bytes, magic)
    }

    pub fn header_word(&self, idx: usize, name: &str) -> Result<u32> {
        self.header
            .get(idx)
            .copied()
            .ok_or_else(|| Error::format("container", format!("missing header field `{name}`")))
    }

    /// Cursor over the arrays, in declaration order.
    pub fn array_cursor(&self) -> ArrayCursor<'_> {
        ArrayCursor {
            arrays: &self.arrays,
            next: 0,
        }
    }
}

pub struct ArrayCursor<'a> {
    arrays: &'a [Vec<f64>],
    next: usize,
}

impl<'a> ArrayCursor<'a> {
    pub fn take(&mut self, what: &str, expected_len: Option<usize>) -> Result<&'a [f64]> {
        let a = self
            .arrays
            .get(self.next)
            .ok_or_else(|| Error::format("container", format!("missing array `{what}`")))?;
        if let Some(n) = expected_len {
            if a.len() != n {
                return Err(Error::format(
                    "container",
                    format!("array `{what}` has length {}, expected {n}", a.len()),
                ));
            }
        }
        self.next += 1;
        Ok(a)
    }

    pub fn finish(&self) -> Result<()> {
        if self.next != self.arrays.len() {
            return Err(Error::format(
                "container",
                format!("{} unexpected extra arrays", self.arrays.len() - self.next),
            ));
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format("container", "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Cast a stored float back to a count, rejecting anything that is not a
/// small non-negative integer.
pub(crate) fn as_index(v: f64, what: &str) -> Result<usize> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < (1u64 << 40) as f64 {
        Ok(v as usize)
    } else {
        Err(Error::format("container", format!("`{what}` is not a valid index: {v}")))
    }
}
