//! `SEDT` tensor files and `SEDA` named-tensor archives.
//!
//! Tensor layout (all integers little-endian):
//!
//! ```text
//! b"SEDT" | dtype: u8 (1 = f32, 2 = f64) | rank: u8 | dims: rank × u64 | payload
//! ```
//!
//! An archive is `b"SEDA" | count: u32 | count × (name_len: u32 | name | SEDT record)`.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TENSOR_MAGIC: &[u8; 4] = b"SEDT";
pub const ARCHIVE_MAGIC: &[u8; 4] = b"SEDA";

pub(crate) fn encode<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::DTYPE);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.len() * T::BYTES);
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode_with<T: Scalar, U: Scalar>(
    cur: &mut Cursor<'_>,
    shape: Vec<usize>,
) -> std::result::Result<Tensor<T>, String> {
    let n: usize = shape.iter().product();
    let bytes = cur.take(n * U::BYTES)?;
    let data: Vec<T> = if T::DTYPE == U::DTYPE {
        bytes.chunks_exact(U::BYTES).map(T::read_le).collect()
    } else {
        bytes
            .chunks_exact(U::BYTES)
            .map(|c| T::lit(U::read_le(c).as_f64()))
            .collect()
    };
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

fn decode<T: Scalar>(cur: &mut Cursor<'_>) -> std::result::Result<Tensor<T>, String> {
    if cur.take(4)? != TENSOR_MAGIC {
        return Err("bad magic".into());
    }
    let dtype = cur.take(1)?[0];
    let rank = cur.take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| "dimension overflow".to_string())?);
    }
    match dtype {
        1 => decode_with::<T, f32>(cur, shape),
        2 => decode_with::<T, f64>(cur, shape),
        other => Err(format!("unknown dtype code {other}")),
    }
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    encode(t, &mut buf);
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

/// Reads a tensor file, converting the payload to `T` if it was stored in
/// the other precision.
pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let t = decode(&mut cur).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })?;
    if cur.pos != buf.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "trailing bytes".into(),
        });
    }
    Ok(t)
}

pub fn write_archive<T: Scalar>(path: impl AsRef<Path>, entries: &[(String, &Tensor<T>)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(ARCHIVE_MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        encode(t, &mut buf);
    }
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_archive<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<T>)>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4).map_err(fmt)? != ARCHIVE_MAGIC {
        return Err(fmt("bad archive magic".into()));
    }
    let count = cur.u32().map_err(fmt)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32().map_err(fmt)? as usize;
        let name = std::str::from_utf8(cur.take(len).map_err(fmt)?)
            .map_err(|e| fmt(e.to_string()))?
            .to_string();
        let t = decode(&mut cur).map_err(fmt)?;
        out.push((name, t));
    }
    Ok(out)
}
