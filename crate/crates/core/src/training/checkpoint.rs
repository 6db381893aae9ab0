//! Checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "PAAN" | version u32
//! config block: in_channels, encoder_channels[4], dense_layers, growth,
//!               num_blocks, height, width (u32 each); learning_rate, beta1,
//!               beta2, eps (f64 each); batch_size (u32); seed (u64)
//! state: epoch u32 | adam step u64 | best_val_dsc f64 |
//!        rng seed [u8; 32] | rng stream u64 | rng word position u128
//! records: count u32, then per parameter in sorted path order:
//!          path length u32 | path bytes | value | adam m | adam u
//! checksum: FNV-1a 64 of every preceding byte
//! ```
//!
//! Tensors use the tensor-core encoding (rank, extents, `f32` values).

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use super::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PAAN";
pub const VERSION: u32 = 1;

/// Position of a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Everything needed to resume training bit-for-bit. The run length is not
/// part of it, so a run can be extended from any checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: u32,
    pub best_val_dsc: f64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        let c = self.params.config();
        put_u32(&mut w, c.in_channels as u32);
        for ch in c.encoder_channels {
            put_u32(&mut w, ch as u32);
        }
        for v in [c.dense_layers, c.growth, c.num_blocks, c.input_size.0, c.input_size.1] {
            put_u32(&mut w, v as u32);
        }
        let o = &self.optimizer;
        for v in [o.learning_rate, o.beta1, o.beta2, o.eps] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut w, self.batch_size as u32);
        w.extend_from_slice(&self.seed.to_le_bytes());

        put_u32(&mut w, self.epoch);
        w.extend_from_slice(&self.adam.step.to_le_bytes());
        w.extend_from_slice(&self.best_val_dsc.to_le_bytes());
        w.extend_from_slice(&self.rng.seed);
        w.extend_from_slice(&self.rng.stream.to_le_bytes());
        w.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        put_u32(&mut w, self.params.len() as u32);
        for (path, tensor) in self.params.iter() {
            put_u32(&mut w, path.len() as u32);
            w.extend_from_slice(path.as_bytes());
            tensor.write_to(&mut w).expect("write to Vec");
            let (m, u) = self.adam.moments(path).expect("optimizer state covers every parameter");
            for moment in [m, u] {
                Tensor::new(tensor.shape().to_vec(), moment.to_vec())
                    .expect("moment matches parameter")
                    .write_to(&mut w)
                    .expect("write to Vec");
            }
        }
        let sum = fnv1a(&w);
        w.extend_from_slice(&sum.to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        if bytes.len() < 16 {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(Error::Format("checksum mismatch (corrupted or truncated checkpoint)".into()));
        }
        let mut r = &body[8..];
        let in_channels = get_u32(&mut r)? as usize;
        let mut encoder_channels = [0usize; 4];
        for ch in &mut encoder_channels {
            *ch = get_u32(&mut r)? as usize;
        }
        let dense_layers = get_u32(&mut r)? as usize;
        let growth = get_u32(&mut r)? as usize;
        let num_blocks = get_u32(&mut r)? as usize;
        let h = get_u32(&mut r)? as usize;
        let w = get_u32(&mut r)? as usize;
        let model = ModelConfig { in_channels, encoder_channels, dense_layers, growth, num_blocks, input_size: (h, w) };
        let optimizer = AdamConfig {
            learning_rate: get_f64(&mut r)?,
            beta1: get_f64(&mut r)?,
            beta2: get_f64(&mut r)?,
            eps: get_f64(&mut r)?,
        };
        let batch_size = get_u32(&mut r)? as usize;
        let seed = get_u64(&mut r)?;

        let epoch = get_u32(&mut r)?;
        let step = get_u64(&mut r)?;
        let best_val_dsc = get_f64(&mut r)?;
        let mut rng_seed = [0u8; 32];
        read_exact(&mut r, &mut rng_seed)?;
        let stream = get_u64(&mut r)?;
        let mut wp = [0u8; 16];
        read_exact(&mut r, &mut wp)?;
        let rng = RngState { seed: rng_seed, stream, word_pos: u128::from_le_bytes(wp) };

        let count = get_u32(&mut r)? as usize;
        let mut tensors = BTreeMap::new();
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        let mut last_path: Option<String> = None;
        for _ in 0..count {
            let len = get_u32(&mut r)? as usize;
            if len > 1024 {
                return Err(Error::Format(format!("parameter path of {len} bytes")));
            }
            let mut pb = vec![0u8; len];
            read_exact(&mut r, &mut pb)?;
            let path = String::from_utf8(pb).map_err(|_| Error::Format("non-UTF-8 parameter path".into()))?;
            if last_path.as_ref().is_some_and(|p| *p >= path) {
                return Err(Error::Format(format!("parameter `{path}` out of sorted order")));
            }
            let value = Tensor::read_from(&mut r)?;
            let m = Tensor::read_from(&mut r)?;
            let u = Tensor::read_from(&mut r)?;
            if m.shape() != value.shape() || u.shape() != value.shape() {
                return Err(Error::Format(format!("optimizer moments of `{path}` do not match its shape")));
            }
            first.insert(path.clone(), m.into_data());
            second.insert(path.clone(), u.into_data());
            tensors.insert(path.clone(), value);
            last_path = Some(path);
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        let params = ModelParams::from_tensors(&model, tensors)?;
        Ok(Self { optimizer, batch_size, seed, params, adam: AdamState { first, second, step }, epoch, best_val_dsc, rng })
    }

    /// Writes via a temporary sibling file and rename, so a failed save
    /// never leaves a partial checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("truncated checkpoint".into()))
}

fn get_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}
