//! Bag file format.
//!
//! ```text
//! "XMILBAG1"            8 ASCII bytes
//! N: u32 LE, D: u32 LE
//! N * D f64 LE          row-major features
//! mask flag: u8         0 or 1
//! N bytes of 0/1        only when the flag is 1
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const BAG_MAGIC: &[u8; 8] = b"XMILBAG1";

pub fn write_bag(bag: &Bag) -> Result<Vec<u8>> {
    let (n, d) = bag.features.dims();
    let n32 = u32::try_from(n).map_err(|_| Error::Invalid(format!("{n} instances")))?;
    let d32 = u32::try_from(d).map_err(|_| Error::Invalid(format!("{d} features")))?;
    let mut out = Vec::with_capacity(8 + 8 + n * d * 8 + 1 + n);
    out.extend_from_slice(BAG_MAGIC);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for v in bag.features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match &bag.truth_mask {
        Some(mask) => {
            if mask.len() != n {
                return Err(Error::Invalid(format!(
                    "truth mask has {} entries for {} instances",
                    mask.len(),
                    n
                )));
            }
            out.push(1);
            out.extend(mask.iter().map(|&m| m as u8));
        }
        None => out.push(0),
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated bag file: need {} bytes for {} at offset {}, have {}",
                n,
                what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a bag file. The id is supplied by the caller; labels are not part
/// of the file.
pub fn read_bag(id: &str, bytes: &[u8]) -> Result<Bag> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(8, "magic")?;
    if magic != BAG_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            std::str::from_utf8(BAG_MAGIC).unwrap()
        )));
    }
    let n = cur.u32("instance count")? as usize;
    let d = cur.u32("feature width")? as usize;
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("empty bag shape {n} x {d}")));
    }
    let raw = cur.take(n * d * 8, "features")?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let flag = cur.take(1, "mask flag")?[0];
    let truth_mask = match flag {
        0 => None,
        1 => {
            let m = cur.take(n, "truth mask")?;
            if let Some(b) = m.iter().find(|&&b| b > 1) {
                return Err(Error::Format(format!("truth mask byte {b} is not 0/1")));
            }
            Some(m.iter().map(|&b| b == 1).collect())
        }
        other => return Err(Error::Format(format!("mask flag {other} is not 0/1"))),
    };
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after bag payload",
            bytes.len() - cur.pos
        )));
    }
    Ok(Bag {
        id: id.to_string(),
        features: Tensor::matrix(n, d, data)?,
        label: None,
        positions: None,
        truth_mask,
    })
}

/// Writes atomically (temp file then rename).
pub fn save_bag(path: &Path, bag: &Bag) -> Result<()> {
    let bytes = write_bag(bag)?;
    write_atomic(path, &bytes)
}

/// Loads a bag; its id is the file stem.
pub fn load_bag(path: &Path) -> Result<Bag> {
    let bytes = fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_bag(&id, &bytes)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
