use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the growable encoder/decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Width of each output frame (the spectrogram analog).
    pub frame_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Target depth `L` of each stack.
    pub target_layers: usize,
    /// Number of growth stages `c`; the model starts at and grows by `L / c`.
    pub growth_parts: usize,
    pub max_seq_len: usize,
    /// Divide raw weights by the He constant instead of multiplying.
    pub literal_division: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            frame_dim: 16,
            d_model: 32,
            heads: 2,
            ffn_dim: 64,
            target_layers: 6,
            growth_parts: 6,
            max_seq_len: 64,
            literal_division: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("frame_dim", self.frame_dim),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("target_layers", self.target_layers),
            ("growth_parts", self.growth_parts),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.heads ({})",
                self.d_model, self.heads
            )));
        }
        if !self.target_layers.is_multiple_of(self.growth_parts) {
            return Err(Error::Config(format!(
                "model.target_layers ({}) must be divisible by model.growth_parts ({})",
                self.target_layers, self.growth_parts
            )));
        }
        Ok(())
    }

    /// `q = L / c`, the initial depth and the growth increment.
    pub fn layers_per_growth(&self) -> usize {
        self.target_layers / self.growth_parts
    }
}
