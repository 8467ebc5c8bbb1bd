//! Token entropy and the two attention analyses: where attention mass lands
//! by absolute position, and how much attention tokens of different entropy
//! receive.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kvcache::{EntropyCache, KvCacheStore, SlotMeta};
use crate::tinylm::{empty_context, forward_step, ops, sequence_logprobs, TinyModel};
use crate::tokenizer::{TokenId, Tokenizer};

/// `-log p(token)` under `logits`, clamped at zero against rounding.
pub fn token_entropy(logits: &[f32], token: TokenId) -> f64 {
    (-ops::log_softmax_f64(logits)[token as usize]).max(0.0)
}

/// Cuts up to `n` sentences of `len` tokens from raw text: a BOS token
/// followed by `len - 1` bytes starting at a line start. Sentences do not
/// overlap.
pub fn sentences_from_text(text: &[u8], len: usize, n: usize) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut start = 0;
    let body = len.saturating_sub(1);
    while out.len() < n && start + body <= text.len() {
        let mut s = Vec::with_capacity(len);
        s.push(Tokenizer::BOS);
        s.extend(text[start..start + body].iter().map(|&b| b as TokenId));
        out.push(s);
        let end = start + body;
        match text[end..].iter().position(|&b| b == b'\n') {
            Some(p) => start = end + p + 1,
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEntropySeries {
    pub tokens: Vec<TokenId>,
    pub entropies: Vec<f64>,
}

pub fn compute_entropy(model: &TinyModel, tokens: &[TokenId]) -> Result<TokenEntropySeries> {
    let lp = sequence_logprobs(model, tokens)?;
    Ok(TokenEntropySeries {
        tokens: tokens.to_vec(),
        entropies: lp.into_iter().map(|l| (-l).max(0.0)).collect(),
    })
}

/// Decodes one sentence step by step with attention capture. Returns the
/// per-token entropies and `[layer][query][key]` weights averaged over heads.
fn traced(model: &TinyModel, tokens: &[TokenId]) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let n_layers = model.config().n_layers;
    let mut store = KvCacheStore::for_model(model.config());
    let mut scores = EntropyCache::new();
    let mut logits = empty_context(model);
    let mut entropies = Vec::with_capacity(tokens.len());
    let mut rows = vec![Vec::with_capacity(tokens.len()); n_layers];
    for (i, &t) in tokens.iter().enumerate() {
        let e = token_entropy(&logits, t);
        let out = forward_step(model, t, &store, true)?;
        let cap = out.attention.as_ref().expect("capture requested");
        for (layer, heads) in cap.weights.iter().enumerate() {
            let mut row = vec![0.0f64; i + 1];
            for head in heads {
                for (acc, &w) in row.iter_mut().zip(head) {
                    *acc += w as f64;
                }
            }
            let nh = heads.len() as f64;
            row.iter_mut().for_each(|w| *w /= nh);
            rows[layer].push(row);
        }
        store.append(
            &mut scores,
            &out.new_keys,
            &out.new_values,
            SlotMeta::new(i as u64, e, 0),
        )?;
        entropies.push(e);
        logits = out.logits;
    }
    Ok((entropies, rows))
}

/// Attention received by key `j`: the mean over the later queries `j+1..n`
/// of their weight on `j`. The last key has no later query and is left out.
fn received(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    (0..n.saturating_sub(1))
        .map(|j| rows[j + 1..].iter().map(|r| r[j]).sum::<f64>() / (n - 1 - j) as f64)
        .collect()
}

fn check_sentences(sentences: &[Vec<TokenId>], len: usize) -> Result<()> {
    if sentences.is_empty() {
        return Err(Error::input("no sentences"));
    }
    if let Some((i, s)) = sentences.iter().enumerate().find(|(_, s)| s.len() < len) {
        return Err(Error::input(format!(
            "sentence {i} has {} tokens, need {len}",
            s.len()
        )));
    }
    Ok(())
}

/// Post-softmax attention by absolute position, averaged over heads and
/// sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkProfile {
    pub len: usize,
    /// `[layer][query][key]`, lower triangular; each row sums to one.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// `[layer][key]`: mean weight a key receives from the later queries;
    /// the last position has none and is absent.
    pub received: Vec<Vec<f64>>,
}

impl SinkProfile {
    /// Columns: `layer,position,mean_weight`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "position", "mean_weight"])?;
        for (layer, row) in self.received.iter().enumerate() {
            for (pos, v) in row.iter().enumerate() {
                w.write_record([layer.to_string(), pos.to_string(), format!("{v:.8}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn attention_sink_profile(
    model: &TinyModel,
    sentences: &[Vec<TokenId>],
    len: usize,
) -> Result<SinkProfile> {
    if len == 0 {
        return Err(Error::input("profile length must be positive"));
    }
    check_sentences(sentences, len)?;
    let n_layers = model.config().n_layers;
    let mut weights: Vec<Vec<Vec<f64>>> =
        vec![(0..len).map(|q| vec![0.0; q + 1]).collect(); n_layers];
    for s in sentences {
        let (_, rows) = traced(model, &s[..len])?;
        for (acc, layer) in weights.iter_mut().zip(&rows) {
            for (a, r) in acc.iter_mut().zip(layer) {
                for (x, y) in a.iter_mut().zip(r) {
                    *x += y;
                }
            }
        }
    }
    let n = sentences.len() as f64;
    for row in weights.iter_mut().flatten() {
        row.iter_mut().for_each(|x| *x /= n);
    }
    let received = weights.iter().map(|l| received(l)).collect();
    Ok(SinkProfile {
        len,
        weights,
        received,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub n_segments: usize,
    /// `[layer][segment]`, segment 0 holding the lowest-entropy tokens.
    pub weights: Vec<Vec<f64>>,
    pub mean_weights: Vec<f64>,
    pub mean_rank: Vec<f64>,
    pub first_proportion: Vec<f64>,
}

impl SegmentReport {
    /// Columns: `layer,segment,mean_weight,rank`; segments are numbered from 1.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "segment", "mean_weight", "rank"])?;
        for (layer, row) in self.weights.iter().enumerate() {
            let ranks = ranks(row);
            for (s, v) in row.iter().enumerate() {
                w.write_record([
                    layer.to_string(),
                    (s + 1).to_string(),
                    format!("{v:.8}"),
                    ranks[s].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "segments (low to high entropy): {}\nmean weight: {}\nmean rank: {}\nfirst-rank proportion: {}\n",
            self.n_segments,
            fmt(&self.mean_weights),
            fmt(&self.mean_rank),
            fmt(&self.first_proportion)
        )
    }
}

/// Rank 1 goes to the largest weight; ties favour the lower segment.
fn ranks(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let mut out = vec![0; row.len()];
    for (r, &s) in order.iter().enumerate() {
        out[s] = r + 1;
    }
    out
}

/// Splits `0..n` by ascending entropy into `k` bins whose sizes differ by at
/// most one, extra items going to the low-entropy bins. Ties order by index.
pub fn entropy_bins(entropies: &[f64], k: usize) -> Vec<Vec<usize>> {
    let n = entropies.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| entropies[a].total_cmp(&entropies[b]).then(a.cmp(&b)));
    let (base, extra) = (n / k, n % k);
    let mut bins = Vec::with_capacity(k);
    let mut start = 0;
    for s in 0..k {
        let size = base + usize::from(s < extra);
        bins.push(order[start..start + size].to_vec());
        start += size;
    }
    bins
}

pub fn entropy_segment_analysis(
    model: &TinyModel,
    sentences: &[Vec<TokenId>],
    len: usize,
    n_segments: usize,
) -> Result<SegmentReport> {
    if n_segments == 0 || len < n_segments + 2 {
        return Err(Error::input(format!(
            "length {len} is too short for {n_segments} segments"
        )));
    }
    check_sentences(sentences, len)?;
    let n_layers = model.config().n_layers;
    let mut weights = vec![vec![0.0; n_segments]; n_layers];
    for s in sentences {
        let (entropies, rows) = traced(model, &s[..len])?;
        // the first token is left out, and the last has no later queries
        let bins = entropy_bins(&entropies[1..len - 1], n_segments);
        for (acc, layer) in weights.iter_mut().zip(&rows) {
            let recv = received(layer);
            for (a, bin) in acc.iter_mut().zip(&bins) {
                *a += bin.iter().map(|&i| recv[i + 1]).sum::<f64>() / bin.len() as f64;
            }
        }
    }
    let n = sentences.len() as f64;
    weights.iter_mut().flatten().for_each(|w| *w /= n);

    let nl = n_layers as f64;
    let mut mean_weights = vec![0.0; n_segments];
    let mut mean_rank = vec![0.0; n_segments];
    let mut first_proportion = vec![0.0; n_segments];
    for row in &weights {
        let r = ranks(row);
        for s in 0..n_segments {
            mean_weights[s] += row[s] / nl;
            mean_rank[s] += r[s] as f64 / nl;
            if r[s] == 1 {
                first_proportion[s] += 1.0 / nl;
            }
        }
    }
    Ok(SegmentReport {
        n_segments,
        weights,
        mean_weights,
        mean_rank,
        first_proportion,
    })
}
