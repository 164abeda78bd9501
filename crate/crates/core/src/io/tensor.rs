//! Tensor files.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "MVST"
//! 4       1         version (1)
//! 5       1         dtype (1 = f32 little-endian)
//! 6       2         reserved (0)
//! 8       4         rank, u32 LE
//! 12      4·rank    dims, u32 LE each
//! …       4·Πdims   row-major f32 LE payload
//! ```
//!
//! Values are promoted to `f64` on read.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"MVST";
pub const FORMAT_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let width = self.dims.last().copied().unwrap_or(0).max(1);
        self.values.chunks(width)
    }
}

/// Appends everything after the magic: version, dtype, reserved, rank, dims
/// and payload.
pub fn encode_body(values: &[f64], dims: &[usize], out: &mut Vec<u8>, origin: &Path) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "dims {dims:?} need {expected} values, got {}",
            values.len()
        )));
    }
    out.push(FORMAT_VERSION);
    out.push(DTYPE_F32);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&u32_of(dims.len(), origin)?.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&u32_of(*d, origin)?.to_le_bytes());
    }
    out.reserve(values.len() * 4);
    for (index, v) in values.iter().enumerate() {
        let narrowed = *v as f32;
        if !narrowed.is_finite() {
            return Err(Error::NonFiniteValue {
                path: origin.to_path_buf(),
                index,
            });
        }
        out.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(())
}

fn u32_of(v: usize, origin: &Path) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Malformed {
        path: origin.to_path_buf(),
        detail: format!("{v} does not fit in u32"),
    })
}

/// Cursor over a byte buffer that reports truncation against a path.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::TruncatedFile {
                path: self.path.to_path_buf(),
                detail: format!(
                    "need {n} bytes for {what} at offset {}, {} left",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().expect("4 bytes");
        if &found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                found,
            });
        }
        Ok(())
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn path(&self) -> &'a Path {
        self.path
    }
}

pub(crate) fn decode_body(r: &mut Reader) -> Result<Tensor> {
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: r.path().to_path_buf(),
            what: "version",
            found: version.into(),
        });
    }
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedVersion {
            path: r.path().to_path_buf(),
            what: "dtype",
            found: dtype.into(),
        });
    }
    let reserved = r.u16("reserved")?;
    if reserved != 0 {
        return Err(Error::Malformed {
            path: r.path().to_path_buf(),
            detail: format!("reserved field is {reserved}, expected 0"),
        });
    }
    let rank = r.u32("rank")? as usize;
    let mut dims = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        dims.push(r.u32("dims")? as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .and_then(|c| c.checked_mul(4).map(|_| c))
        .ok_or_else(|| Error::Malformed {
            path: r.path().to_path_buf(),
            detail: format!("dims {dims:?} overflow"),
        })?;
    let payload = r.take(count * 4, "payload")?;
    let mut values = Vec::with_capacity(count);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                path: r.path().to_path_buf(),
                index,
            });
        }
        values.push(f64::from(v));
    }
    Ok(Tensor { dims, values })
}

pub fn encode_tensor(values: &[f64], dims: &[usize], origin: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * values.len());
    out.extend_from_slice(TENSOR_MAGIC);
    encode_body(values, dims, &mut out, origin)?;
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let mut r = Reader::new(bytes, origin);
    r.magic(TENSOR_MAGIC)?;
    let t = decode_body(&mut r)?;
    if !r.is_done() {
        return Err(Error::Malformed {
            path: origin.to_path_buf(),
            detail: "trailing bytes after payload".into(),
        });
    }
    Ok(t)
}

pub fn write_tensor(path: impl AsRef<Path>, values: &[f64], dims: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(values, dims, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}
