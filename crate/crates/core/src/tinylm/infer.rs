use super::ops;
use super::train::forward_dense;
use super::TinyModel;
use crate::error::{Error, Result};
use crate::kvcache::KvCacheStore;
use crate::tokenizer::TokenId;

/// Attention weights captured during one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture {
    /// Rotary index used for each cached slot (always `0..cache_len`).
    pub key_positions: Vec<usize>,
    /// Rotary index of the query, equal to the cache length.
    pub query_position: usize,
    /// `[layer][head][slot]`; the final entry of each row is the query token
    /// attending to itself.
    pub weights: Vec<Vec<Vec<f32>>>,
}

/// Result of decoding one token.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Next-token logits over the vocabulary.
    pub logits: Vec<f32>,
    /// Per-layer key of the new token, before rotation.
    pub new_keys: Vec<Vec<f32>>,
    pub new_values: Vec<Vec<f32>>,
    pub attention: Option<AttentionCapture>,
}

/// Decodes `token` against the slots currently held in `cache`.
///
/// Slot `j` is rotated to position `j` and the new token sits at position
/// `cache.len()`; original text positions in the slot metadata play no
/// part. The cache itself is not modified.
pub fn forward_step(
    model: &TinyModel,
    token: TokenId,
    cache: &KvCacheStore,
    capture_attention: bool,
) -> Result<StepOutput> {
    let cfg = model.config();
    let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let (nh, hd) = (cfg.n_heads, cfg.head_dim());
    if token as usize >= v {
        return Err(Error::contract(format!(
            "token {token} outside vocabulary of {v}"
        )));
    }
    if cache.n_layers() != cfg.n_layers || cache.n_heads() != nh || cache.head_dim() != hd {
        return Err(Error::contract(format!(
            "cache shape {}x{}x{} does not match model {}x{}x{}",
            cache.n_layers(),
            cache.n_heads(),
            cache.head_dim(),
            cfg.n_layers,
            nh,
            hd
        )));
    }
    let layout = model.layout();
    let params = model.params();
    let n = cache.len();
    let scale = 1.0 / (hd as f32).sqrt();
    let query_angles = model.rope_at(n);

    let mut x =
        params[layout.tok_emb.clone()][token as usize * d..(token as usize + 1) * d].to_vec();
    let mut new_keys = Vec::with_capacity(cfg.n_layers);
    let mut new_values = Vec::with_capacity(cfg.n_layers);
    let mut captured = capture_attention.then(|| Vec::with_capacity(cfg.n_layers));

    let mut h = vec![0.0f32; d];
    let mut q = vec![0.0f32; d];
    let mut k = vec![0.0f32; d];
    let mut val = vec![0.0f32; d];
    let mut rotated = vec![0.0f32; d];
    let mut scores = vec![0.0f32; nh * (n + 1)];
    let mut att = vec![0.0f32; d];
    let mut o = vec![0.0f32; d];
    let mut u = vec![0.0f32; f];
    let mut m = vec![0.0f32; d];

    for (layer, b) in layout.blocks.iter().enumerate() {
        ops::rms_norm(&x, &params[b.attn_norm.clone()], &mut h);
        ops::vec_mat(&h, &params[b.wq.clone()], &mut q);
        ops::vec_mat(&h, &params[b.wk.clone()], &mut k);
        ops::vec_mat(&h, &params[b.wv.clone()], &mut val);
        new_keys.push(k.clone());
        new_values.push(val.clone());
        ops::rope_apply(&mut q, hd, &query_angles);

        for j in 0..n {
            rotated.copy_from_slice(cache.key(layer, j));
            ops::rope_apply(&mut rotated, hd, &model.rope_at(j));
            for head in 0..nh {
                let hs = head * hd..(head + 1) * hd;
                scores[head * (n + 1) + j] = ops::dot(&q[hs.clone()], &rotated[hs]) * scale;
            }
        }
        rotated.copy_from_slice(&k);
        ops::rope_apply(&mut rotated, hd, &query_angles);
        for head in 0..nh {
            let hs = head * hd..(head + 1) * hd;
            scores[head * (n + 1) + n] = ops::dot(&q[hs.clone()], &rotated[hs]) * scale;
        }

        att.iter_mut().for_each(|a| *a = 0.0);
        for head in 0..nh {
            let hs = head * hd..(head + 1) * hd;
            let p = &mut scores[head * (n + 1)..(head + 1) * (n + 1)];
            ops::softmax_in_place(p);
            let out = &mut att[hs.clone()];
            for (j, &pj) in p[..n].iter().enumerate() {
                ops::axpy(pj, &cache.value(layer, j)[hs.clone()], out);
            }
            ops::axpy(p[n], &val[hs], out);
        }
        if let Some(c) = captured.as_mut() {
            c.push(
                scores
                    .chunks_exact(n + 1)
                    .map(<[f32]>::to_vec)
                    .collect::<Vec<_>>(),
            );
        }
        ops::vec_mat(&att, &params[b.wo.clone()], &mut o);
        x.iter_mut().zip(&o).for_each(|(xi, oi)| *xi += oi);

        ops::rms_norm(&x, &params[b.mlp_norm.clone()], &mut h);
        ops::vec_mat(&h, &params[b.w1.clone()], &mut u);
        for (ui, &bi) in u.iter_mut().zip(&params[b.b1.clone()]) {
            *ui = ops::gelu(*ui + bi);
        }
        ops::vec_mat(&u, &params[b.w2.clone()], &mut m);
        for ((xi, &mi), &bi) in x.iter_mut().zip(&m).zip(&params[b.b2.clone()]) {
            *xi += mi + bi;
        }
    }

    ops::rms_norm(&x, &params[layout.final_norm.clone()], &mut h);
    let mut logits = vec![0.0f32; v];
    ops::vec_mat(&h, &params[layout.lm_head.clone()], &mut logits);

    Ok(StepOutput {
        logits,
        new_keys,
        new_values,
        attention: captured.map(|weights| AttentionCapture {
            key_positions: (0..n).collect(),
            query_position: n,
            weights,
        }),
    })
}

/// Logits the model assigns with no context at all: the output head applied
/// to a zero state, which is uniform.
pub fn empty_context_logits(model: &TinyModel) -> Vec<f32> {
    vec![0.0; model.config().vocab_size]
}

/// `log P(tokens[i] | tokens[..i])` under full causal attention. Element 0 is
/// scored against the empty context.
pub fn sequence_logprobs(model: &TinyModel, tokens: &[TokenId]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::contract(
            "sequence_logprobs needs at least one token",
        ));
    }
    let cfg = model.config();
    let v = cfg.vocab_size;
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= v) {
        return Err(Error::contract(format!(
            "token {bad} outside vocabulary of {v}"
        )));
    }
    let acts = forward_dense(cfg, model.layout(), model.params(), tokens);
    let mut out = Vec::with_capacity(tokens.len());
    out.push(ops::log_softmax_f64(&empty_context_logits(model))[tokens[0] as usize]);
    for i in 1..tokens.len() {
        let lp = ops::log_softmax_f64(&acts.logits[(i - 1) * v..i * v]);
        out.push(lp[tokens[i] as usize]);
    }
    Ok(out)
}
