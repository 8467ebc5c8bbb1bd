//! Perplexity over a long token stream decoded through an evicting cache.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::entropy::token_entropy;
use crate::error::{Error, Result};
use crate::kvcache::{evict, CacheBudget, EntropyCache, EvictionPolicy, KvCacheStore, SlotMeta};
use crate::tinylm::{forward_step, TinyModel};
use crate::tokenizer::TokenId;

/// Trailing window for the windowed log-perplexity.
pub const PPL_WINDOW: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    /// Position in the stream of each scored token; token 0 only opens the
    /// context and is not scored.
    pub positions: Vec<usize>,
    pub nll: Vec<f64>,
    /// Mean NLL over the last `window` scored tokens (fewer at the start).
    pub windowed_log_ppl: Vec<f64>,
    pub mean_log_ppl: f64,
    pub window: usize,
    /// Positions at which an eviction fired.
    pub evictions: Vec<usize>,
}

impl PplReport {
    /// Largest windowed value over scored positions in `range`.
    pub fn max_windowed(&self, range: std::ops::Range<usize>) -> Option<f64> {
        self.positions
            .iter()
            .zip(&self.windowed_log_ppl)
            .filter(|(p, _)| range.contains(p))
            .map(|(_, &w)| w)
            .reduce(f64::max)
    }

    /// Columns: `position,nll,windowed_log_ppl`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["position", "nll", "windowed_log_ppl"])?;
        for ((p, n), wl) in self
            .positions
            .iter()
            .zip(&self.nll)
            .zip(&self.windowed_log_ppl)
        {
            w.write_record([p.to_string(), format!("{n:.8}"), format!("{wl:.8}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trailing means of `xs` over `window` entries.
pub fn windowed_mean(xs: &[f64], window: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let a = (i + 1).saturating_sub(window);
            xs[a..=i].iter().sum::<f64>() / (i + 1 - a) as f64
        })
        .collect()
}

pub fn stream_ppl(
    model: &TinyModel,
    text: &[TokenId],
    policy: &EvictionPolicy,
    budget: &CacheBudget,
) -> Result<PplReport> {
    stream_ppl_windowed(model, text, policy, budget, PPL_WINDOW)
}

/// Decodes `text` token by token. Each token's NLL is taken from the logits
/// produced by its predecessor, and the cache is evicted back to capacity
/// whenever an append takes it over.
pub fn stream_ppl_windowed(
    model: &TinyModel,
    text: &[TokenId],
    policy: &EvictionPolicy,
    budget: &CacheBudget,
    window: usize,
) -> Result<PplReport> {
    budget.validate()?;
    if window == 0 {
        return Err(Error::config("window must be positive"));
    }
    if text.len() < 2 * budget.capacity {
        return Err(Error::input(format!(
            "stream of {} tokens is shorter than twice the capacity {}",
            text.len(),
            budget.capacity
        )));
    }
    let mut strategy = policy.build();
    let mut store = KvCacheStore::for_model(model.config());
    let mut scores = EntropyCache::new();
    let mut logits = Vec::new();
    let mut positions = Vec::with_capacity(text.len());
    let mut nll = Vec::with_capacity(text.len());
    let mut evictions = Vec::new();
    for (i, &t) in text.iter().enumerate() {
        let e = if i == 0 {
            0.0
        } else {
            token_entropy(&logits, t)
        };
        if i > 0 {
            positions.push(i);
            nll.push(e);
        }
        let out = forward_step(model, t, &store, false)?;
        store.append(
            &mut scores,
            &out.new_keys,
            &out.new_values,
            SlotMeta::new(i as u64, e, 0),
        )?;
        if store.len() > budget.capacity {
            evict(&mut store, &mut scores, strategy.as_mut(), budget)?;
            evictions.push(i);
        }
        logits = out.logits;
    }
    let mean_log_ppl = nll.iter().sum::<f64>() / nll.len() as f64;
    Ok(PplReport {
        windowed_log_ppl: windowed_mean(&nll, window),
        positions,
        nll,
        mean_log_ppl,
        window,
        evictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_means() {
        let w = windowed_mean(&[1.0, 3.0, 5.0, 7.0], 2);
        assert_eq!(w, vec![1.0, 2.0, 4.0, 6.0]);
    }
}
