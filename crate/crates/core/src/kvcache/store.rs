use serde::{Deserialize, Serialize};

use super::EntropyCache;
use crate::error::{Error, Result};
use crate::tinylm::ModelConfig;

/// Bookkeeping for one cached token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotMeta {
    /// Position of the token in the full (uncompressed) stream.
    pub original_position: u64,
    /// Entropy recorded when the token was appended; never decayed.
    pub entropy: f64,
    pub turn_index: u32,
}

impl SlotMeta {
    pub fn new(original_position: u64, entropy: f64, turn_index: u32) -> Self {
        Self {
            original_position,
            entropy,
            turn_index,
        }
    }
}

/// Retained key/value vectors for every layer plus per-slot metadata.
///
/// Each layer stores its vectors slot-major: slot `s` occupies
/// `s * d_model .. (s + 1) * d_model`, heads laid out contiguously inside.
/// Keys are stored before the rotary transform.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCacheStore {
    n_heads: usize,
    head_dim: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    slots: Vec<SlotMeta>,
}

impl KvCacheStore {
    pub fn new(n_layers: usize, n_heads: usize, head_dim: usize) -> Self {
        Self {
            n_heads,
            head_dim,
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
            slots: Vec::new(),
        }
    }

    pub fn for_model(cfg: &ModelConfig) -> Self {
        Self::new(cfg.n_layers, cfg.n_heads, cfg.head_dim())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn n_layers(&self) -> usize {
        self.keys.len()
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn d_model(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn slots(&self) -> &[SlotMeta] {
        &self.slots
    }

    /// Mutable metadata access. Reordering positions through this breaks the
    /// ordering invariant; callers only relabel.
    pub fn slots_mut(&mut self) -> &mut [SlotMeta] {
        &mut self.slots
    }

    pub fn layer_keys(&self, layer: usize) -> &[f32] {
        &self.keys[layer]
    }

    pub fn layer_values(&self, layer: usize) -> &[f32] {
        &self.values[layer]
    }

    pub fn key(&self, layer: usize, slot: usize) -> &[f32] {
        let d = self.d_model();
        &self.keys[layer][slot * d..(slot + 1) * d]
    }

    pub fn value(&self, layer: usize, slot: usize) -> &[f32] {
        let d = self.d_model();
        &self.values[layer][slot * d..(slot + 1) * d]
    }

    /// Appends one token's per-layer key/value vectors. Never evicts.
    pub fn append(
        &mut self,
        entropy_cache: &mut EntropyCache,
        keys: &[Vec<f32>],
        values: &[Vec<f32>],
        meta: SlotMeta,
    ) -> Result<()> {
        if entropy_cache.len() != self.len() {
            return Err(Error::contract(format!(
                "entropy cache holds {} scores for {} slots",
                entropy_cache.len(),
                self.len()
            )));
        }
        if keys.len() != self.n_layers() || values.len() != self.n_layers() {
            return Err(Error::contract(format!(
                "expected {} layers of key/value vectors, got {}/{}",
                self.n_layers(),
                keys.len(),
                values.len()
            )));
        }
        let d = self.d_model();
        if keys.iter().chain(values).any(|v| v.len() != d) {
            return Err(Error::contract(format!(
                "key/value vectors must have length {d}"
            )));
        }
        if let Some(last) = self.slots.last() {
            if meta.original_position <= last.original_position {
                return Err(Error::contract(format!(
                    "original position {} does not follow {}",
                    meta.original_position, last.original_position
                )));
            }
        }
        if !meta.entropy.is_finite() || meta.entropy < 0.0 {
            return Err(Error::contract(format!("invalid entropy {}", meta.entropy)));
        }
        for (layer, (k, v)) in keys.iter().zip(values).enumerate() {
            self.keys[layer].extend_from_slice(k);
            self.values[layer].extend_from_slice(v);
        }
        self.slots.push(meta);
        entropy_cache.push(meta.entropy);
        Ok(())
    }

    /// Compacts the store and the entropy cache to `keep`, which must be
    /// strictly increasing slot indices.
    pub fn retain(&mut self, entropy_cache: &mut EntropyCache, keep: &[usize]) -> Result<()> {
        if keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "retained indices must be strictly increasing",
            ));
        }
        if keep.last().is_some_and(|&i| i >= self.len()) {
            return Err(Error::contract("retained index out of range"));
        }
        let d = self.d_model();
        for layer in 0..self.n_layers() {
            compact_rows(&mut self.keys[layer], d, keep);
            compact_rows(&mut self.values[layer], d, keep);
        }
        for (dst, &src) in keep.iter().enumerate() {
            self.slots[dst] = self.slots[src];
        }
        self.slots.truncate(keep.len());
        entropy_cache.retain_indices(keep);
        Ok(())
    }

    pub fn clear(&mut self, entropy_cache: &mut EntropyCache) {
        self.keys
            .iter_mut()
            .chain(self.values.iter_mut())
            .for_each(Vec::clear);
        self.slots.clear();
        entropy_cache.clear();
    }

    /// Checks the structural invariants, returning a description of the first
    /// violation found.
    pub fn check_invariants(&self, entropy_cache: &EntropyCache) -> Result<()> {
        let d = self.d_model();
        for layer in 0..self.n_layers() {
            if self.keys[layer].len() != self.len() * d
                || self.values[layer].len() != self.len() * d
            {
                return Err(Error::contract(format!(
                    "layer {layer} slot count disagrees"
                )));
            }
        }
        if self
            .slots
            .windows(2)
            .any(|w| w[0].original_position >= w[1].original_position)
        {
            return Err(Error::contract("slot order is not strictly increasing"));
        }
        if entropy_cache.len() != self.len() {
            return Err(Error::contract(
                "entropy cache length differs from slot count",
            ));
        }
        Ok(())
    }
}

fn compact_rows(data: &mut Vec<f32>, row: usize, keep: &[usize]) {
    for (dst, &src) in keep.iter().enumerate() {
        if dst != src {
            data.copy_within(src * row..(src + 1) * row, dst * row);
        }
    }
    data.truncate(keep.len() * row);
}
