//! JSON parameter checkpoints.
//!
//! ```json
//! {
//!   "format": "teleplan-mlp",
//!   "format_version": 1,
//!   "param_version": 17,
//!   "input_dim": 10,
//!   "layers": [
//!     { "fan_in": 10, "fan_out": 128, "weights": [...], "bias": [...] },
//!     ...
//!   ]
//! }
//! ```
//!
//! `weights` is the `fan_in × fan_out` matrix in row-major order. Floats are
//! written in shortest round-trip form, so a write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Dense, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "teleplan-mlp";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerDump {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDump {
    format: String,
    format_version: u32,
    param_version: u64,
    input_dim: usize,
    layers: Vec<LayerDump>,
}

pub fn write_checkpoint(params: &Mlp) -> Result<String> {
    let dump = CheckpointDump {
        format: CHECKPOINT_FORMAT.into(),
        format_version: FORMAT_VERSION,
        param_version: params.version,
        input_dim: params.input_dim(),
        layers: params
            .layers
            .iter()
            .map(|l| LayerDump {
                fan_in: l.fan_in(),
                fan_out: l.fan_out(),
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&dump)?)
}

pub fn read_checkpoint(text: &str) -> Result<Mlp> {
    let dump: CheckpointDump = serde_json::from_str(text)?;
    if dump.format != CHECKPOINT_FORMAT || dump.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint format {} v{}",
            dump.format, dump.format_version
        )));
    }
    let mut fan_in = dump.input_dim;
    let mut layers = Vec::with_capacity(dump.layers.len());
    for (i, l) in dump.layers.into_iter().enumerate() {
        if l.fan_in != fan_in || l.bias.len() != l.fan_out {
            return Err(Error::Schema(format!("checkpoint layer {i} has inconsistent shape")));
        }
        let weights = Array2::from_shape_vec((l.fan_in, l.fan_out), l.weights)
            .map_err(|e| Error::Schema(format!("checkpoint layer {i}: {e}")))?;
        fan_in = l.fan_out;
        layers.push(Dense {
            weights,
            bias: Array1::from(l.bias),
        });
    }
    if layers.is_empty() || fan_in != 1 {
        return Err(Error::Schema("checkpoint must end in a scalar output layer".into()));
    }
    let params = Mlp {
        layers,
        version: dump.param_version,
    };
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &Mlp, path: &Path) -> Result<()> {
    let text = write_checkpoint(params)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = Mlp::new(10, 77);
        p.version = 12;
        p.layers[2].bias[5] = 1.0 / 3.0;
        let back = read_checkpoint(&write_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(back.version, 12);
        for (a, b) in p.params().zip(back.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_shapes_and_formats() {
        let p = Mlp::new(3, 1);
        let text = write_checkpoint(&p).unwrap();
        assert!(read_checkpoint(&text.replace("teleplan-mlp", "other")).is_err());
        assert!(read_checkpoint(&text.replacen("\"input_dim\":3", "\"input_dim\":4", 1)).is_err());
    }
}
