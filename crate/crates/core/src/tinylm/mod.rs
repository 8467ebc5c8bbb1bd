//! A small decoder-only transformer with incremental decoding against an
//! externally owned KV cache.
//!
//! Positions are rotary and derived from cache slot indices at attention
//! time. Keys are cached before rotation, so evicting slots re-indexes the
//! survivors without touching stored vectors.

mod config;
mod infer;
mod io;
mod layout;
pub mod ops;
mod train;

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::ModelConfig;
pub use infer::{
    empty_context_logits as empty_context, forward_step, sequence_logprobs, AttentionCapture,
    StepOutput,
};
pub use io::MAGIC;
pub use layout::{BlockLayout, ParamLayout};
pub use train::{
    heldout_loss, loss_and_grad, train, train_with, TrainLogEntry, TrainOptions, TrainReport,
};

use crate::error::{Error, Result};

/// Positions covered by the precomputed rotary table.
const ROPE_TABLE_POSITIONS: usize = 4096;

/// Model weights plus configuration. Immutable once built; share it freely
/// across sessions.
pub struct TinyModel {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<f32>,
    rope: OnceLock<Vec<(f32, f32)>>,
}

impl Clone for TinyModel {
    fn clone(&self) -> Self {
        Self::from_parts(self.config, self.params.clone()).expect("valid model")
    }
}

impl std::fmt::Debug for TinyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TinyModel")
            .field("config", &self.config)
            .field("n_params", &self.params.len())
            .finish()
    }
}

impl PartialEq for TinyModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TinyModel {
    /// Randomly initialized model, deterministic in `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0f32; layout.total];
        let base = Normal::new(0.0f64, 0.02).expect("valid std");
        let residual =
            Normal::new(0.0f64, 0.02 / (2.0 * config.n_layers as f64).sqrt()).expect("valid std");
        for (name, range) in layout.tensors() {
            let slice = &mut params[range];
            if layout.is_gain(&name) {
                slice.fill(1.0);
            } else if name.ends_with(".b1") || name.ends_with(".b2") {
                slice.fill(0.0);
            } else if name.ends_with(".wo") || name.ends_with(".w2") {
                slice
                    .iter_mut()
                    .for_each(|p| *p = residual.sample(&mut rng) as f32);
            } else {
                slice
                    .iter_mut()
                    .for_each(|p| *p = base.sample(&mut rng) as f32);
            }
        }
        Ok(Self {
            config,
            layout,
            params,
            rope: OnceLock::new(),
        })
    }

    pub fn from_parts(config: ModelConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::contract(format!("parameter {i} is not finite")));
        }
        Ok(Self {
            config,
            layout,
            params,
            rope: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Rotation `(cos, sin)` pairs for `position`.
    pub(crate) fn rope_at(&self, position: usize) -> std::borrow::Cow<'_, [(f32, f32)]> {
        let half = self.config.head_dim() / 2;
        if position < ROPE_TABLE_POSITIONS {
            let table = self.rope.get_or_init(|| {
                (0..ROPE_TABLE_POSITIONS)
                    .flat_map(|p| ops::rope_angles::<f32>(p, self.config.head_dim()))
                    .collect()
            });
            std::borrow::Cow::Borrowed(&table[position * half..(position + 1) * half])
        } else {
            std::borrow::Cow::Owned(ops::rope_angles::<f32>(position, self.config.head_dim()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_finite() {
        let cfg = ModelConfig {
            vocab_size: 20,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            trained_len: 8,
            seed: 3,
        };
        let a = TinyModel::init(cfg).unwrap();
        let b = TinyModel::init(cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.params().iter().all(|p| p.is_finite()));
        let c = TinyModel::init(ModelConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let ok = ModelConfig::default();
        assert!(TinyModel::init(ModelConfig {
            d_model: 30,
            n_heads: 4,
            ..ok
        })
        .is_err());
        assert!(TinyModel::init(ModelConfig {
            trained_len: 7,
            ..ok
        })
        .is_err());
        assert!(TinyModel::from_parts(ok, vec![0.0; 3]).is_err());
    }

    #[test]
    fn rope_table_matches_direct_computation() {
        let m = TinyModel::init(ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 8,
            ..Default::default()
        })
        .unwrap();
        for pos in [0, 1, 63, 4095, 4096, 9000] {
            assert_eq!(&*m.rope_at(pos), ops::rope_angles::<f32>(pos, 8).as_slice());
        }
    }
}
