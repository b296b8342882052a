//! Raw tensor files: `ATSR`, `u32` rank, `u32` extents, then the `f64`
//! payload in row-major order. Every integer and float is little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use adafocus_core::diff::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ATSR";

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Encoded bytes of `t`.
pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    write_tensor(&mut buf, t).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one tensor; `origin` names the source in errors.
pub fn read_tensor(r: &mut impl Read, origin: &Path) -> Result<Tensor> {
    let truncated = |e: std::io::Error| Error::format(origin, format!("truncated tensor: {e}"));
    let mut magic = [0; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(Error::format(origin, format!("bad tensor magic {magic:?}")));
    }
    let rank = read_u32(r).map_err(truncated)? as usize;
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|e| e as usize))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(truncated)?;
    let len = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
    let len = len.ok_or_else(|| Error::format(origin, format!("tensor extents {shape:?} overflow")))?;
    let mut bytes = vec![0; len.checked_mul(8).ok_or_else(|| Error::format(origin, "tensor too large"))?];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor::new(shape, data)?)
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    write_tensor(&mut w, t).and_then(|_| w.flush()).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path).map_err(Error::io(path))?);
    let t = read_tensor(&mut r, path)?;
    let mut rest = [0; 1];
    if r.read(&mut rest).map_err(Error::io(path))? != 0 {
        return Err(Error::format(path, "trailing bytes after tensor payload"));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let t = Tensor::new(vec![2, 1, 3], vec![1.0, -2.5, 0.0, 1e-300, f64::MAX, 3.25]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"ATSR");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 4 + 12 + 48);
        assert_eq!(&bytes[20..28], &1.0f64.to_le_bytes());
        let back = read_tensor(&mut bytes.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = encode(&Tensor::vector(vec![1.0, 2.0]));
        let short = &bytes[..bytes.len() - 3];
        assert!(read_tensor(&mut &short[..], Path::new("m")).unwrap_err().to_string().contains("truncated"));
        bytes[0] = b'X';
        assert!(read_tensor(&mut bytes.as_slice(), Path::new("m")).unwrap_err().to_string().contains("magic"));
    }
}
