//! JSON checkpoints for encoders and evidential heads, one file per branch.
//!
//! `weights[l]` is layer `l`'s `n_out × n_in` matrix flattened row-major.

use std::fs;
use std::path::Path;

use etscl_core::contrastive::Encoder;
use etscl_core::nn::{Activation, Dense, Mlp};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: Vec<usize>,
    pub activations: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
    /// Contrastive temperature; absent for evidential heads.
    pub tau: Option<f64>,
    /// Trailing layers that form the projection head (encoders only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
}

impl Checkpoint {
    pub fn from_mlp(net: &Mlp, seed: u64, tau: Option<f64>) -> Self {
        let layers = net.layers();
        Checkpoint {
            arch: net.arch(),
            activations: layers.iter().map(|l| l.activation().name().to_string()).collect(),
            weights: layers.iter().map(|l| l.weights().to_vec()).collect(),
            biases: layers.iter().map(|l| l.bias().to_vec()).collect(),
            seed,
            tau,
            projection_layers: None,
            normalize: None,
        }
    }

    pub fn from_encoder(enc: &Encoder, seed: u64, tau: f64) -> Self {
        Checkpoint {
            projection_layers: Some(enc.projection_depth()),
            normalize: Some(enc.normalizes()),
            ..Checkpoint::from_mlp(enc.net(), seed, Some(tau))
        }
    }

    pub fn to_mlp(&self) -> std::result::Result<Mlp, String> {
        let n = self.arch.len().checked_sub(1).filter(|n| *n > 0).ok_or("arch needs at least two sizes")?;
        if self.activations.len() != n || self.weights.len() != n || self.biases.len() != n {
            return Err(format!("arch describes {n} layers but activations/weights/biases disagree"));
        }
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let act = Activation::parse(&self.activations[l])
                .ok_or_else(|| format!("unknown activation {:?}", self.activations[l]))?;
            let layer = Dense::new(self.arch[l], self.arch[l + 1], self.weights[l].clone(), self.biases[l].clone(), act)
                .map_err(|e| format!("layer {l}: {e}"))?;
            layers.push(layer);
        }
        Mlp::new(layers).map_err(|e| e.to_string())
    }

    pub fn to_encoder(&self) -> std::result::Result<Encoder, String> {
        let depth = self.projection_layers.ok_or("encoder checkpoint lacks projection_layers")?;
        Encoder::new(self.to_mlp()?, depth, self.normalize.unwrap_or(true)).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoints serialize")
    }
}

pub fn write(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_json()).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path, what: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(CliError::MissingCheckpoint { what: what.to_string(), path: path.to_path_buf() });
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.line(), e.to_string()))
}

pub fn read_encoder(path: &Path, what: &str) -> Result<Encoder> {
    read(path, what)?.to_encoder().map_err(|m| CliError::format(path, 1, m))
}

pub fn read_head(path: &Path, what: &str) -> Result<Mlp> {
    read(path, what)?.to_mlp().map_err(|m| CliError::format(path, 1, m))
}
