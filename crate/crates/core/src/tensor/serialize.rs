//! Binary tensor encoding: `rank: u32`, `rank` extents as `u32`, then the
//! values as little-endian `f32`.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

/// Upper bound on element count accepted when decoding, guards against
/// allocating from corrupted headers.
const MAX_ELEMENTS: u64 = 1 << 31;
const MAX_RANK: u32 = 8;

impl Tensor<f32> {
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.shape().len() as u32).to_le_bytes())?;
        for &d in self.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.numel() * 4);
        for v in self.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let rank = read_u32(r)?;
        if rank > MAX_RANK {
            return Err(Error::Format(format!("tensor rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = read_u32(r)?;
            if d == 0 {
                return Err(Error::Format("zero tensor extent".into()));
            }
            numel = numel.saturating_mul(d as u64);
            shape.push(d as usize);
        }
        if numel > MAX_ELEMENTS {
            return Err(Error::Format(format!("tensor with {numel} elements")));
        }
        let mut bytes = vec![0u8; numel as usize * 4];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}

pub(crate) fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated input: {e}"))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}
