//! Model checkpoints: `ACKP`, `u32` version, the model configuration as
//! key-value text, then named parameter tensors in the raw tensor format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use adafocus_core::diff::Tensor;
use adafocus_core::model::ModelComponents;

use crate::config::{model_from_text, model_to_text};
use crate::error::{Error, Result};
use crate::tensor_io::{read_tensor, write_tensor};

pub const MAGIC: [u8; 4] = *b"ACKP";
pub const VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_checkpoint(w: &mut impl Write, model: &ModelComponents) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_str(w, &model_to_text(&model.config))?;
    let params = model.named_params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, _, t) in params {
        write_str(w, &name)?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn save(path: &Path, model: &ModelComponents) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    write_checkpoint(&mut w, model).and_then(|_| w.flush()).map_err(Error::io(path))
}

fn read_bytes<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N]> {
    let mut b = [0; N];
    r.read_exact(&mut b).map_err(|e| Error::format(path, format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_str(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = u32::from_le_bytes(read_bytes(r, path)?) as usize;
    let mut buf = vec![0; len];
    r.read_exact(&mut buf).map_err(|e| Error::format(path, format!("truncated checkpoint: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::format(path, "checkpoint string is not UTF-8"))
}

pub fn read_checkpoint(r: &mut impl Read, path: &Path) -> Result<ModelComponents> {
    if read_bytes::<4>(r, path)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(read_bytes(r, path)?);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let config = model_from_text(&read_str(r, path)?)?;
    let count = u32::from_le_bytes(read_bytes(r, path)?) as usize;
    let mut named: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(r, path)?;
        named.push((name, read_tensor(r, path)?));
    }
    let mut model = ModelComponents::new(config, 0)?;
    model.load_params(&named)?;
    Ok(model)
}

pub fn load(path: &Path) -> Result<ModelComponents> {
    let mut r = BufReader::new(File::open(path).map_err(Error::io(path))?);
    read_checkpoint(&mut r, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use adafocus_core::model::ModelConfig;

    #[test]
    fn round_trip_preserves_every_parameter() {
        let model = ModelComponents::new(ModelConfig::default(), 42).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        let back = read_checkpoint(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_foreign_bytes() {
        let err = read_checkpoint(&mut &b"ATSR\0\0\0\0"[..], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }
}
