use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// Shape and seed of a [`TinyModel`](super::TinyModel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Longest sequence seen during training.
    pub trained_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: Tokenizer::VOCAB_SIZE,
            d_model: 64,
            n_heads: 4,
            n_layers: 4,
            d_ff: 256,
            trained_len: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::config(
                "vocab_size, d_model, n_heads and n_layers must be positive",
            ));
        }
        if self.d_ff == 0 {
            return Err(Error::config("d_ff must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::config(
                "head dimension must be even for the rotary transform",
            ));
        }
        if self.trained_len < 8 {
            return Err(Error::config(format!(
                "trained_len {} < 8",
                self.trained_len
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
