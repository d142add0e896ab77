//! `.vtf` tensor files.
//!
//! Layout: magic `VTF1`, a `u8` dtype code (1 = f32, 2 = f64), a `u8` rank,
//! `rank` little-endian `u64` extents, then the row-major little-endian
//! payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor, PRECISION};

pub const MAGIC: &[u8; 4] = b"VTF1";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let width = match PRECISION {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut out = Vec::with_capacity(6 + 8 * t.ndim() + width * t.len());
    out.extend_from_slice(MAGIC);
    out.push(PRECISION.vtf_code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("truncated .vtf data".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

/// Decode one tensor from the front of `buf`, advancing it.
pub fn decode(buf: &mut &[u8]) -> Result<Tensor> {
    if take(buf, 4)? != MAGIC {
        return Err(Error::Format("bad .vtf magic".into()));
    }
    let code = take(buf, 1)?[0];
    let ndim = take(buf, 1)?[0] as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(take(buf, 8)?.try_into().expect("8 bytes"));
        shape.push(usize::try_from(d).map_err(|_| Error::Format("extent overflow".into()))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format("extent overflow".into()))?;
    let data: Vec<Scalar> = match code {
        1 => take(buf, n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as Scalar)
            .collect(),
        2 => take(buf, n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")) as Scalar)
            .collect(),
        other => return Err(Error::Format(format!("unknown .vtf dtype code {other}"))),
    };
    Tensor::new(&shape, data)
}

pub fn write<W: Write>(t: &Tensor, mut w: W) -> std::io::Result<()> {
    w.write_all(&encode(t))
}

pub fn read<R: Read>(mut r: R) -> Result<Tensor> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<reader>", e))?;
    let mut s = buf.as_slice();
    let t = decode(&mut s)?;
    if !s.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", s.len())));
    }
    Ok(t)
}

pub fn write_file(t: &Tensor, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Tensor> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.5, -2.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"VTF1");
        assert_eq!(b[4], PRECISION.vtf_code());
        assert_eq!(b[5], 2);
        assert_eq!(u64::from_le_bytes(b[6..14].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[14..22].try_into().unwrap()), 1);
    }

    #[test]
    fn reads_f32_payloads() {
        let mut b = Vec::new();
        b.extend_from_slice(b"VTF1");
        b.extend_from_slice(&[1, 1]);
        b.extend_from_slice(&3u64.to_le_bytes());
        for v in [0.5f32, 0.25, -1.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let t = read(b.as_slice()).unwrap();
        assert_eq!(t.data(), &[0.5, 0.25, -1.0]);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let t = Tensor::from_vec(vec![1.0, 2.0]);
        let b = encode(&t);
        assert!(read(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(read(bad.as_slice()).is_err());
        let mut code = b;
        code[4] = 9;
        assert!(read(code.as_slice()).is_err());
    }
}
