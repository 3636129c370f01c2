//! Binary checkpoint format, version 1. All integers and floats little-endian.
//!
//! ```text
//! magic            8 bytes   "CVSURR\0\x01"
//! version          u32       1
//! input_dim        u32
//! n_layers         u32
//! output_tag       u8        0 = identity, 1 = absolute value
//! reserved         3 bytes   zero
//! box_length       f64       nm
//! dropout          f64
//! split_seed       u64       seed of the train/test split the model was fitted on
//! train_fraction   f64
//! cv_name_len      u32
//! cv_name          cv_name_len bytes, UTF-8
//! manifest         n_layers × (fan_out u32, fan_in u32)
//! parameters       per layer: weight (fan_out × fan_in, row-major) then bias (fan_out), f64
//! ```
//!
//! The file must end exactly after the last bias value.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dense, Mlp, OutputActivation};
use crate::error::{Error, Result};
use crate::geometry::SimBox;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"CVSURR\0\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Split metadata stored alongside the weights so evaluation can recover the
/// held-out rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitInfo {
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for SplitInfo {
    fn default() -> Self {
        SplitInfo {
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

pub fn encode(model: &Mlp, split: SplitInfo) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + 8 * model.n_parameters());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    buf.push(model.output.tag());
    buf.extend_from_slice(&[0; 3]);
    buf.extend_from_slice(&model.sim_box.length().to_le_bytes());
    buf.extend_from_slice(&model.dropout.to_le_bytes());
    buf.extend_from_slice(&split.seed.to_le_bytes());
    buf.extend_from_slice(&split.train_fraction.to_le_bytes());
    buf.extend_from_slice(&(model.cv_name.len() as u32).to_le_bytes());
    buf.extend_from_slice(model.cv_name.as_bytes());
    for l in &model.layers {
        buf.extend_from_slice(&(l.fan_out() as u32).to_le_bytes());
        buf.extend_from_slice(&(l.fan_in() as u32).to_le_bytes());
    }
    for t in model.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Mlp, SplitInfo)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::Checkpoint("magic mismatch".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let input_dim = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let tag = r.take(4)?[0];
    let output = OutputActivation::from_tag(tag)
        .ok_or_else(|| Error::Checkpoint(format!("unknown output activation tag {tag}")))?;
    let sim_box = SimBox::new(r.f64()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let dropout = r.f64()?;
    let split = SplitInfo {
        seed: r.u64()?,
        train_fraction: r.f64()?,
    };
    let name_len = r.u32()? as usize;
    let cv_name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::Checkpoint("cv name is not UTF-8".into()))?
        .to_string();
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out = r.u32()? as usize;
        let inp = r.u32()? as usize;
        shapes.push((out, inp));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (out, inp) in shapes {
        let w: Vec<f64> = (0..out * inp).map(|_| r.f64()).collect::<Result<_>>()?;
        let b: Vec<f64> = (0..out).map(|_| r.f64()).collect::<Result<_>>()?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((out, inp), w).expect("manifest shape"),
            bias: Array1::from(b),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    let model = Mlp::from_layers(layers, output, dropout, sim_box, cv_name)
        .map_err(|e| Error::Checkpoint(format!("inconsistent layer manifest: {e}")))?;
    if model.input_dim() != input_dim {
        return Err(Error::Checkpoint(format!(
            "header input_dim {input_dim} disagrees with manifest {}",
            model.input_dim()
        )));
    }
    Ok((model, split))
}

pub fn write_checkpoint(path: &Path, model: &Mlp, split: SplitInfo) -> Result<()> {
    std::fs::write(path, encode(model, split)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(Mlp, SplitInfo)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
