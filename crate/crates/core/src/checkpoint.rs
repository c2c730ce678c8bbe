//! Versioned binary checkpoint encoding.
//!
//! Layout (all integers little-endian):
//! magic `"MSQ1"`, format version `u32`, layer count `u32`, then per layer:
//! kind tag `u8` (0 = GRU, 1 = Dense), `in_dim u32`, `out_dim u32`,
//! `frozen u8`, followed by the layer's parameter arrays as little-endian
//! `f64` in declared field order (GRU: W_z, W_r, W_h, U_z, U_r, U_h,
//! b_z, b_r, b_h; Dense: weight, bias).

use alloc::vec::Vec;
use thiserror::Error;

use crate::nn::{LayerKind, Model};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MSQ1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version: expected {expected}, found {found}")]
    BadVersion { expected: u32, found: u32 },
    #[error("unknown layer kind tag {0}")]
    BadLayerKind(u8),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("trailing bytes after last layer")]
    TrailingBytes,
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.push(match layer.kind {
            LayerKind::Gru => 0,
            LayerKind::Dense => 1,
        });
        out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
        out.push(layer.frozen as u8);
        for pid in layer.param_ids() {
            for v in model.params()[pid].data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64_array(&mut self, len: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    let mut params = Vec::new();
    for _ in 0..layer_count {
        let kind = match r.u8()? {
            0 => LayerKind::Gru,
            1 => LayerKind::Dense,
            other => return Err(CheckpointError::BadLayerKind(other)),
        };
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let frozen = r.u8()? != 0;
        match kind {
            LayerKind::Gru => {
                for _ in 0..3 {
                    let data = r.f64_array(in_dim * out_dim)?;
                    params.push(Tensor::new(alloc::vec![in_dim, out_dim], data));
                }
                for _ in 0..3 {
                    let data = r.f64_array(out_dim * out_dim)?;
                    params.push(Tensor::new(alloc::vec![out_dim, out_dim], data));
                }
                for _ in 0..3 {
                    let data = r.f64_array(out_dim)?;
                    params.push(Tensor::new(alloc::vec![1, out_dim], data));
                }
            }
            LayerKind::Dense => {
                let data = r.f64_array(in_dim * out_dim)?;
                params.push(Tensor::new(alloc::vec![in_dim, out_dim], data));
                let data = r.f64_array(out_dim)?;
                params.push(Tensor::new(alloc::vec![1, out_dim], data));
            }
        }
        layers.push((kind, in_dim, out_dim, frozen));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes);
    }
    Ok(Model::from_parts(layers, params))
}
