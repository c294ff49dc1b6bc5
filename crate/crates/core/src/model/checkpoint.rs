//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "ADVLCKPT"
//! version      u32      1
//! seed         u64
//! k, m         u32, u32
//! input_dim    u32
//! n_hidden     u32, then n_hidden x u32 widths
//! output       u32
//! n_ops        u32, then per op: u32 byte length + UTF-8 name
//! per layer    fan_out*fan_in f64 weights (row-major), fan_out f64 biases
//! ```
//!
//! Floats are stored as their IEEE-754 bit patterns, so a write/read
//! round trip is bit-exact.

use std::path::Path;

use super::{Arch, ClassSpace, Layer, ModelParams};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADVLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        push_u32(&mut out, self.class_space.k());
        push_u32(&mut out, self.class_space.m());
        push_u32(&mut out, self.arch.input_dim);
        push_u32(&mut out, self.arch.hidden.len());
        for &h in &self.arch.hidden {
            push_u32(&mut out, h);
        }
        push_u32(&mut out, self.arch.output);
        push_u32(&mut out, self.operations.len());
        for op in &self.operations {
            push_u32(&mut out, op.len());
            out.extend_from_slice(op.as_bytes());
        }
        for layer in &self.layers {
            for v in layer.weight.data().iter().chain(layer.bias.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let k = r.u32()? as usize;
        let m = r.u32()? as usize;
        let class_space = ClassSpace::new(k, m).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let input_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let output = r.u32()? as usize;
        let arch = Arch { input_dim, hidden, output };
        arch.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        if output != class_space.width() {
            return Err(Error::Checkpoint(format!("output width {output} != K+M {}", class_space.width())));
        }
        let n_ops = r.u32()? as usize;
        if n_ops != m {
            return Err(Error::Checkpoint(format!("{n_ops} operation names for M = {m}")));
        }
        let mut operations = Vec::with_capacity(n_ops);
        for _ in 0..n_ops {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("operation name is not UTF-8".into()))?;
            operations.push(name.to_string());
        }
        let mut layers = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let w = r.f64s(fan_in * fan_out)?;
            let b = r.f64s(fan_out)?;
            layers.push(Layer {
                weight: Tensor::matrix(fan_out, fan_in, w)?,
                bias: Tensor::vector(b),
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(ModelParams { arch, class_space, seed, layers, operations })
    }
}

pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, params.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    ModelParams::from_bytes(&std::fs::read(path)?)
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = Arch::new(5, vec![7, 3], 4);
        let p = init_params(&arch, ClassSpace::new(2, 2).unwrap(), vec!["identity".into(), "pgd".into()], 11).unwrap();
        let bytes = p.to_bytes();
        let q = ModelParams::from_bytes(&bytes).unwrap();
        assert_eq!(q.to_bytes(), bytes);
        for (a, b) in p.layers.iter().zip(&q.layers) {
            for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(q.operations, vec!["identity", "pgd"]);
    }

    #[test]
    fn rejects_corruption() {
        let p = init_params(&Arch::new(2, vec![], 2), ClassSpace::new(2, 0).unwrap(), vec![], 1).unwrap();
        let bytes = p.to_bytes();
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelParams::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(ModelParams::from_bytes(&long).is_err());
    }
}
