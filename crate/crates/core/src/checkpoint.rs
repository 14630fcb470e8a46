//! Binary checkpoint container.
//!
//! Layout, all integers and reals little-endian:
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 8            | magic `RFLOWCK1`                                     |
//! | 4            | header length `L` as `u32`                           |
//! | `L`          | UTF-8 JSON header (see [`CheckpointHeader`])         |
//! | rest         | per layer: weight (row-major, out x in) then bias, each value an `f64` |
//!
//! The reader rejects trailing bytes, short files and shape mismatches.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::nn::{MlpArch, MlpParams};
use crate::scalar::Scalar;
use crate::velocity::{BoundaryKind, ModelKind};

pub const MAGIC: &[u8; 8] = b"RFLOWCK1";
pub const FORMAT: &str = "rectiflow-checkpoint/1";

/// How the backbone is wrapped into a velocity field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_functions: Option<BoundaryKind>,
    /// The frozen `C` of a mask model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_mean: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub arch: MlpArch,
    pub seed: u64,
    pub step: u64,
    pub model: ModelDescriptor,
    /// `(out, in)` per layer, in forward order.
    pub layer_shapes: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub arch: MlpArch,
    pub seed: u64,
    pub step: u64,
    pub model: ModelDescriptor,
    pub params: MlpParams<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format: FORMAT.to_string(),
            arch: self.arch.clone(),
            seed: self.seed,
            step: self.step,
            model: self.model.clone(),
            layer_shapes: self.arch.layer_shapes(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header =
            serde_json::to_vec(&self.header()).map_err(|e| FlowError::Checkpoint(e.to_string()))?;
        let len = u32::try_from(header.len()).map_err(|_| FlowError::Checkpoint("header too large".into()))?;
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        for layer in &self.params.layers {
            for &w in layer.weight.iter() {
                out.extend_from_slice(&w.as_f64().to_le_bytes());
            }
            for &b in layer.bias.iter() {
                out.extend_from_slice(&b.as_f64().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| FlowError::Checkpoint(msg.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < len {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..len]).map_err(|e| FlowError::Checkpoint(e.to_string()))?;
        if header.format != FORMAT {
            return Err(FlowError::Checkpoint(format!("unsupported format `{}`", header.format)));
        }
        header.arch.validate()?;
        if header.layer_shapes != header.arch.layer_shapes() {
            return Err(bad("layer shapes disagree with the architecture"));
        }
        let mut params = MlpParams::zeros(&header.arch);
        let data = &body[len..];
        if data.len() != 8 * params.num_params() {
            return Err(FlowError::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                8 * params.num_params(),
                data.len()
            )));
        }
        for (slot, chunk) in params.iter_mut().zip(data.chunks_exact(8)) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(bad("non-finite parameter"));
            }
            *slot = T::lit(v);
        }
        Ok(Self {
            arch: header.arch,
            seed: header.seed,
            step: header.step,
            model: header.model,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.to_bytes()?)?;
        Ok(file.sync_all()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    fn sample() -> Checkpoint<f64> {
        let mut arch = MlpArch::default_for(2);
        arch.hidden = vec![5, 3];
        arch.time_frequencies = 2;
        Checkpoint {
            params: init_params(&arch, 9).unwrap(),
            arch,
            seed: 9,
            step: 123,
            model: ModelDescriptor {
                kind: ModelKind::Mask,
                boundary_functions: Some(BoundaryKind::Quadratic),
                data_mean: Some(vec![0.25, -1.0 / 3.0]),
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(Checkpoint::<f64>::from_bytes(&bytes).unwrap(), ck);
        assert_eq!(Checkpoint::<f64>::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn parameters_follow_the_header_in_layer_order() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let first = f64::from_le_bytes(bytes[12 + len..20 + len].try_into().unwrap());
        assert_eq!(first, ck.params.layers[0].weight[[0, 0]]);
        let second = f64::from_le_bytes(bytes[20 + len..28 + len].try_into().unwrap());
        assert_eq!(second, ck.params.layers[0].weight[[0, 1]]);
        let last = f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(last, *ck.params.layers.last().unwrap().bias.last().unwrap());
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&wrong_magic).is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::<f64>::from_bytes(&extra).is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("rectiflow-ck-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), ck);
        fs::remove_dir_all(&dir).unwrap();
    }
}
