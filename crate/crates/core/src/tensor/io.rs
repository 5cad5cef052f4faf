//! Flat binary tensor container.
//!
//! Layout (little-endian): `b"CMFT"`, version `u16`, rank `u16`, `rank`
//! dimensions as `u64`, element width `u8` (4 or 8), then the raw elements.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Element, Tensor};
use crate::error::{CmfError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"CMFT";
pub const TENSOR_VERSION: u16 = 1;

impl<T: Element> Tensor<T> {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.rank() + self.numel() * T::WIDTH as usize);
        buf.extend_from_slice(TENSOR_MAGIC);
        buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        let rank =
            u16::try_from(self.rank()).map_err(|_| CmfError::Format(format!("rank {} too large", self.rank())))?;
        buf.extend_from_slice(&rank.to_le_bytes());
        for &d in self.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.push(T::WIDTH);
        for &v in self.data() {
            v.write_le(&mut buf);
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads one tensor record. Elements stored at the other width are
    /// converted to `T`.
    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(CmfError::Format(format!("bad tensor magic {magic:?}")));
        }
        let version = read_u16(&mut input)?;
        if version != TENSOR_VERSION {
            return Err(CmfError::Format(format!("unsupported tensor version {version}")));
        }
        let rank = read_u16(&mut input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            let d = u64::from_le_bytes(b);
            shape.push(usize::try_from(d).map_err(|_| CmfError::Format(format!("dimension {d} too large")))?);
        }
        let mut width = [0u8; 1];
        input.read_exact(&mut width)?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CmfError::Format("element count overflows".into()))?;
        let data = match width[0] {
            4 => read_elements::<f32, T, _>(&mut input, numel)?,
            8 => read_elements::<f64, T, _>(&mut input, numel)?,
            w => return Err(CmfError::Format(format!("unsupported element width {w}"))),
        };
        Tensor::new(shape, data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

fn read_u16<R: Read>(input: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    input.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_elements<S: Element, T: Element, R: Read>(input: &mut R, numel: usize) -> Result<Vec<T>> {
    let width = S::WIDTH as usize;
    let mut raw = vec![0u8; numel * width];
    input.read_exact(&mut raw)?;
    Ok(raw.chunks_exact(width).map(|c| T::of(S::read_le(c).as_f64())).collect())
}

pub fn write_tensor_file<T: Element>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    tensor.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    Tensor::read_from(BufReader::new(File::open(path)?))
}
