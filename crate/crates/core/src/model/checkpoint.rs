//! Checkpoint container: magic `CMFK`, u16 version, u32-length config header
//! (`key=value` text), u32 entry count, then per entry a u32-length name and
//! one tensor record. Integers are little-endian.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::assembly::{build_seeded, ConMatFormer};
use super::config::ModelConfig;
use crate::error::{CmfError, Result};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CMFK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<T: Element, W: Write>(model: &ConMatFormer<T>, mut out: W) -> Result<()> {
    let header = model.config.to_kv();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    out.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, tensor) in model.params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        tensor.write_to(&mut out)?;
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(input: &mut R, what: &str) -> Result<String> {
    let len = read_u32(input)? as usize;
    if len > 1 << 20 {
        return Err(CmfError::Format(format!("{what} length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CmfError::Format(format!("{what} is not UTF-8")))
}

/// Reads a checkpoint; every parameter of the configured model must be
/// present exactly once with its expected shape.
pub fn read_checkpoint<T: Element, R: Read>(mut input: R) -> Result<ConMatFormer<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CmfError::Format(format!("not a checkpoint (magic {magic:?})")));
    }
    let mut v = [0u8; 2];
    input.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(CmfError::Format(format!("unsupported checkpoint version {version}")));
    }
    let header = read_string(&mut input, "config header")?;
    let config = ModelConfig::from_kv(&header, &ModelConfig::paper())?;
    let mut model = build_seeded::<T>(&config, 0)?;
    let count = read_u32(&mut input)? as usize;
    if count != model.params.len() {
        return Err(CmfError::Format(format!("checkpoint has {count} tensors, model needs {}", model.params.len())));
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name = read_string(&mut input, "tensor name")?;
        let tensor = Tensor::<T>::read_from(&mut input)?;
        if !seen.insert(name.clone()) {
            return Err(CmfError::Format(format!("duplicate tensor {name:?}")));
        }
        model.params.set(&name, tensor).map_err(|e| CmfError::Format(format!("tensor {name:?}: {e}")))?;
    }
    Ok(model)
}

pub fn save_checkpoint<T: Element>(model: &ConMatFormer<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<ConMatFormer<T>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
