//! Dense (full-sequence) forward pass, manual backward pass and the Adam
//! training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ops::{self, Real};
use super::{ModelConfig, ParamLayout, TinyModel};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Tokenizer};

struct BlockActs<T> {
    x_in: Vec<T>,
    h1: Vec<T>,
    inv1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads × len × len`, row `i` valid for columns `0..=i`.
    probs: Vec<T>,
    att: Vec<T>,
    x_mid: Vec<T>,
    h2: Vec<T>,
    inv2: Vec<T>,
    u: Vec<T>,
    a: Vec<T>,
}

pub(crate) struct DenseActs<T> {
    len: usize,
    blocks: Vec<BlockActs<T>>,
    x_final: Vec<T>,
    hf: Vec<T>,
    invf: Vec<T>,
    pub(crate) logits: Vec<T>,
}

fn row<T>(m: &[T], width: usize, r: usize) -> &[T] {
    &m[r * width..(r + 1) * width]
}

fn row_mut<T>(m: &mut [T], width: usize, r: usize) -> &mut [T] {
    &mut m[r * width..(r + 1) * width]
}

/// Causal forward pass over a whole sequence with positions `0..len`.
pub(crate) fn forward_dense<T: Real>(
    cfg: &ModelConfig,
    layout: &ParamLayout,
    params: &[T],
    tokens: &[TokenId],
) -> DenseActs<T> {
    let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let (nh, hd) = (cfg.n_heads, cfg.head_dim());
    let len = tokens.len();
    let scale = T::one() / T::lit(hd as f64).sqrt();
    let angles: Vec<Vec<(T, T)>> = (0..len).map(|p| ops::rope_angles(p, hd)).collect();

    let emb = &params[layout.tok_emb.clone()];
    let mut x = Vec::with_capacity(len * d);
    for &t in tokens {
        x.extend_from_slice(row(emb, d, t as usize));
    }

    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for b in &layout.blocks {
        let x_in = x.clone();
        let mut h1 = vec![T::zero(); len * d];
        let mut inv1 = vec![T::zero(); len];
        for t in 0..len {
            inv1[t] = ops::rms_norm(
                row(&x_in, d, t),
                &params[b.attn_norm.clone()],
                row_mut(&mut h1, d, t),
            );
        }
        let mut q = ops::mat_mat(&h1, d, &params[b.wq.clone()], d);
        let mut k = ops::mat_mat(&h1, d, &params[b.wk.clone()], d);
        let vv = ops::mat_mat(&h1, d, &params[b.wv.clone()], d);
        for t in 0..len {
            ops::rope_apply(row_mut(&mut q, d, t), hd, &angles[t]);
            ops::rope_apply(row_mut(&mut k, d, t), hd, &angles[t]);
        }
        let mut probs = vec![T::zero(); nh * len * len];
        let mut att = vec![T::zero(); len * d];
        for h in 0..nh {
            let hs = h * hd..(h + 1) * hd;
            for i in 0..len {
                let p = &mut probs[(h * len + i) * len..(h * len + i) * len + i + 1];
                let qi = &row(&q, d, i)[hs.clone()];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = ops::dot(qi, &row(&k, d, j)[hs.clone()]) * scale;
                }
                ops::softmax_in_place(p);
                let out = &mut row_mut(&mut att, d, i)[hs.clone()];
                for (j, &pj) in p.iter().enumerate() {
                    ops::axpy(pj, &row(&vv, d, j)[hs.clone()], out);
                }
            }
        }
        let o = ops::mat_mat(&att, d, &params[b.wo.clone()], d);
        let x_mid: Vec<T> = x_in.iter().zip(&o).map(|(&a, &b)| a + b).collect();

        let mut h2 = vec![T::zero(); len * d];
        let mut inv2 = vec![T::zero(); len];
        for t in 0..len {
            inv2[t] = ops::rms_norm(
                row(&x_mid, d, t),
                &params[b.mlp_norm.clone()],
                row_mut(&mut h2, d, t),
            );
        }
        let mut u = ops::mat_mat(&h2, d, &params[b.w1.clone()], f);
        let b1 = &params[b.b1.clone()];
        for t in 0..len {
            row_mut(&mut u, f, t)
                .iter_mut()
                .zip(b1)
                .for_each(|(x, &bb)| *x += bb);
        }
        let a: Vec<T> = u.iter().map(|&z| ops::gelu(z)).collect();
        let m = ops::mat_mat(&a, f, &params[b.w2.clone()], d);
        let b2 = &params[b.b2.clone()];
        x = x_mid.clone();
        for t in 0..len {
            let xr = row_mut(&mut x, d, t);
            for c in 0..d {
                xr[c] += m[t * d + c] + b2[c];
            }
        }
        blocks.push(BlockActs {
            x_in,
            h1,
            inv1,
            q,
            k,
            v: vv,
            probs,
            att,
            x_mid,
            h2,
            inv2,
            u,
            a,
        });
    }

    let mut hf = vec![T::zero(); len * d];
    let mut invf = vec![T::zero(); len];
    for t in 0..len {
        invf[t] = ops::rms_norm(
            row(&x, d, t),
            &params[layout.final_norm.clone()],
            row_mut(&mut hf, d, t),
        );
    }
    let logits = ops::mat_mat(&hf, d, &params[layout.lm_head.clone()], v);
    DenseActs {
        len,
        blocks,
        x_final: x,
        hf,
        invf,
        logits,
    }
}

/// Accumulates parameter gradients of `sum_t dlogits[t] · logits[t]`.
fn backward_dense<T: Real>(
    cfg: &ModelConfig,
    layout: &ParamLayout,
    params: &[T],
    tokens: &[TokenId],
    acts: &DenseActs<T>,
    dlogits: &[T],
    grad: &mut [T],
) {
    let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let (nh, hd) = (cfg.n_heads, cfg.head_dim());
    let len = acts.len;
    let scale = T::one() / T::lit(hd as f64).sqrt();
    let angles: Vec<Vec<(T, T)>> = (0..len).map(|p| ops::rope_angles(p, hd)).collect();

    let dhf = ops::mat_mat_backward(
        &acts.hf,
        d,
        &params[layout.lm_head.clone()],
        v,
        dlogits,
        &mut grad[layout.lm_head.clone()],
    );
    let mut dx = vec![T::zero(); len * d];
    for t in 0..len {
        ops::rms_norm_backward(
            row(&acts.x_final, d, t),
            &params[layout.final_norm.clone()],
            acts.invf[t],
            row(&dhf, d, t),
            &mut grad[layout.final_norm.clone()],
            row_mut(&mut dx, d, t),
        );
    }

    for (b, ba) in layout.blocks.iter().zip(&acts.blocks).rev() {
        // MLP
        {
            let db2 = &mut grad[b.b2.clone()];
            for t in 0..len {
                ops::axpy(T::one(), row(&dx, d, t), db2);
            }
        }
        let da = ops::mat_mat_backward(
            &ba.a,
            f,
            &params[b.w2.clone()],
            d,
            &dx,
            &mut grad[b.w2.clone()],
        );
        let du: Vec<T> = da
            .iter()
            .zip(&ba.u)
            .map(|(&g, &z)| g * ops::gelu_grad(z))
            .collect();
        {
            let db1 = &mut grad[b.b1.clone()];
            for t in 0..len {
                ops::axpy(T::one(), row(&du, f, t), db1);
            }
        }
        let dh2 = ops::mat_mat_backward(
            &ba.h2,
            d,
            &params[b.w1.clone()],
            f,
            &du,
            &mut grad[b.w1.clone()],
        );
        for t in 0..len {
            ops::rms_norm_backward(
                row(&ba.x_mid, d, t),
                &params[b.mlp_norm.clone()],
                ba.inv2[t],
                row(&dh2, d, t),
                &mut grad[b.mlp_norm.clone()],
                row_mut(&mut dx, d, t),
            );
        }

        // Attention
        let datt = ops::mat_mat_backward(
            &ba.att,
            d,
            &params[b.wo.clone()],
            d,
            &dx,
            &mut grad[b.wo.clone()],
        );
        let mut dq = vec![T::zero(); len * d];
        let mut dk = vec![T::zero(); len * d];
        let mut dv = vec![T::zero(); len * d];
        let mut dp = vec![T::zero(); len];
        for h in 0..nh {
            let hs = h * hd..(h + 1) * hd;
            for i in 0..len {
                let p = &ba.probs[(h * len + i) * len..(h * len + i) * len + i + 1];
                let dai = &row(&datt, d, i)[hs.clone()];
                let mut weighted = T::zero();
                for j in 0..=i {
                    dp[j] = ops::dot(dai, &row(&ba.v, d, j)[hs.clone()]);
                    weighted += p[j] * dp[j];
                    ops::axpy(p[j], dai, &mut row_mut(&mut dv, d, j)[hs.clone()]);
                }
                for j in 0..=i {
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    ops::axpy(
                        ds,
                        &row(&ba.k, d, j)[hs.clone()],
                        &mut row_mut(&mut dq, d, i)[hs.clone()],
                    );
                    ops::axpy(
                        ds,
                        &row(&ba.q, d, i)[hs.clone()],
                        &mut row_mut(&mut dk, d, j)[hs.clone()],
                    );
                }
            }
        }
        for t in 0..len {
            ops::rope_apply_inverse(row_mut(&mut dq, d, t), hd, &angles[t]);
            ops::rope_apply_inverse(row_mut(&mut dk, d, t), hd, &angles[t]);
        }
        let mut dh1 = ops::mat_mat_backward(
            &ba.h1,
            d,
            &params[b.wq.clone()],
            d,
            &dq,
            &mut grad[b.wq.clone()],
        );
        let dh1k = ops::mat_mat_backward(
            &ba.h1,
            d,
            &params[b.wk.clone()],
            d,
            &dk,
            &mut grad[b.wk.clone()],
        );
        let dh1v = ops::mat_mat_backward(
            &ba.h1,
            d,
            &params[b.wv.clone()],
            d,
            &dv,
            &mut grad[b.wv.clone()],
        );
        for ((a, &bk), &bv) in dh1.iter_mut().zip(&dh1k).zip(&dh1v) {
            *a += bk + bv;
        }
        for t in 0..len {
            ops::rms_norm_backward(
                row(&ba.x_in, d, t),
                &params[b.attn_norm.clone()],
                ba.inv1[t],
                row(&dh1, d, t),
                &mut grad[b.attn_norm.clone()],
                row_mut(&mut dx, d, t),
            );
        }
    }

    let demb = &mut grad[layout.tok_emb.clone()];
    for (t, &tok) in tokens.iter().enumerate() {
        ops::axpy(T::one(), row(&dx, d, t), row_mut(demb, d, tok as usize));
    }
}

/// Mean next-token cross-entropy over a batch and its gradient.
///
/// Each sequence contributes predictions for tokens `1..len`.
pub fn loss_and_grad<T: Real>(
    cfg: &ModelConfig,
    params: &[T],
    batch: &[Vec<TokenId>],
) -> Result<(f64, Vec<T>)> {
    cfg.validate()?;
    let layout = ParamLayout::new(cfg);
    if params.len() != layout.total {
        return Err(Error::contract("parameter vector does not match config"));
    }
    let targets: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
    if targets == 0 {
        return Err(Error::contract("batch has no prediction targets"));
    }
    let norm = T::lit(1.0 / targets as f64);
    let v = cfg.vocab_size;
    let mut grad = vec![T::zero(); layout.total];
    let mut loss = 0.0f64;
    for seq in batch {
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= v) {
            return Err(Error::contract(format!(
                "token {bad} outside vocabulary of {v}"
            )));
        }
        let acts = forward_dense(cfg, &layout, params, seq);
        let mut dlogits = vec![T::zero(); seq.len() * v];
        for t in 0..seq.len().saturating_sub(1) {
            let target = seq[t + 1] as usize;
            let lp = ops::log_softmax_f64(row(&acts.logits, v, t));
            loss -= lp[target];
            let dl = row_mut(&mut dlogits, v, t);
            for (c, g) in dl.iter_mut().enumerate() {
                let p = lp[c].exp();
                let y = if c == target { 1.0 } else { 0.0 };
                *g = T::lit(p - y) * norm;
            }
        }
        backward_dense(cfg, &layout, params, seq, &acts, &dlogits, &mut grad);
    }
    Ok((loss / targets as f64, grad))
}

/// Fixed optimizer and schedule settings.
#[derive(Debug, Clone, Serialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub warmup: usize,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub min_lr_ratio: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub grad_clip: f32,
    pub log_every: usize,
    /// Tail of the corpus held out for evaluation.
    pub heldout_fraction: f64,
}

impl TrainOptions {
    pub fn new(steps: usize, lr: f32) -> Self {
        Self {
            steps,
            lr,
            batch_size: 16,
            warmup: (steps / 10).min(100),
            min_lr_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            grad_clip: 1.0,
            log_every: 50,
            heldout_fraction: 0.1,
        }
    }

    fn lr_at(&self, step: usize) -> f32 {
        if step < self.warmup {
            return self.lr * (step + 1) as f32 / self.warmup as f32;
        }
        let span = (self.steps - self.warmup).max(1) as f32;
        let progress = (step - self.warmup) as f32 / span;
        let cosine = 0.5 * (1.0 + (std::f32::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cosine)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub train_loss: f64,
    pub lr: f32,
    pub heldout_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    pub log: Vec<TrainLogEntry>,
}

/// Splits a corpus into training bytes and a held-out tail. Short corpora
/// are used whole for both.
fn split_corpus(corpus: &[u8], trained_len: usize, fraction: f64) -> (&[u8], &[u8]) {
    let tail = ((corpus.len() as f64 * fraction) as usize).max(trained_len);
    if corpus.len() < tail + trained_len {
        return (corpus, corpus);
    }
    corpus.split_at(corpus.len() - tail)
}

fn window(bytes: &[u8], start: usize, len: usize) -> Vec<TokenId> {
    std::iter::once(Tokenizer::BOS)
        .chain(
            bytes[start..start + len - 1]
                .iter()
                .map(|&b| TokenId::from(b)),
        )
        .collect()
}

/// Mean next-token loss over up to 64 consecutive BOS-prefixed windows.
pub fn heldout_loss(model: &TinyModel, text: &[u8]) -> Result<f64> {
    let len = model.config().trained_len;
    if text.len() + 1 < len {
        return Err(Error::input("held-out text shorter than one window"));
    }
    let n = ((text.len() + 1) / len).clamp(1, 64);
    let batch: Vec<Vec<TokenId>> = (0..n).map(|i| window(text, i * (len - 1), len)).collect();
    let layout = model.layout();
    let v = model.config().vocab_size;
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in &batch {
        let acts = forward_dense(model.config(), layout, model.params(), seq);
        for t in 0..seq.len() - 1 {
            total -= ops::log_softmax_f64(row(&acts.logits, v, t))[seq[t + 1] as usize];
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Trains a fresh model on raw corpus bytes with default options.
pub fn train(corpus: &[u8], config: ModelConfig, steps: usize, lr: f32) -> Result<TinyModel> {
    train_with(corpus, config, &TrainOptions::new(steps, lr), |_| {}).map(|(m, _)| m)
}

/// Trains a fresh model, reporting progress through `on_log`.
///
/// Initialization uses `config.seed`; batch sampling draws from a separate
/// stream of the same seed, so the run is fully determined by its inputs.
pub fn train_with(
    corpus: &[u8],
    config: ModelConfig,
    opts: &TrainOptions,
    mut on_log: impl FnMut(&TrainLogEntry),
) -> Result<(TinyModel, TrainReport)> {
    config.validate()?;
    if opts.steps == 0 {
        return Err(Error::config("training needs at least one step"));
    }
    if opts.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let len = config.trained_len;
    if corpus.len() < len {
        return Err(Error::config(format!(
            "corpus has {} bytes, fewer than trained_len {len}",
            corpus.len()
        )));
    }
    if config.vocab_size < 256 + 1 {
        return Err(Error::config("byte-level training needs vocab_size > 256"));
    }
    let (train_bytes, heldout) = split_corpus(corpus, len, opts.heldout_fraction);

    let mut model = TinyModel::init(config)?;
    let initial = heldout_loss(&model, heldout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let n = model.params.len();
    let mut m = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let mut log = Vec::new();
    let max_start = train_bytes.len() + 1 - len;
    for step in 0..opts.steps {
        let batch: Vec<Vec<TokenId>> = (0..opts.batch_size)
            .map(|_| window(train_bytes, rng.random_range(0..=max_start), len))
            .collect();
        let (loss, mut grad) = loss_and_grad::<f32>(&config, &model.params, &batch)?;
        let norm = grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt() as f32;
        if norm > opts.grad_clip {
            let s = opts.grad_clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let lr = opts.lr_at(step);
        let t = (step + 1) as i32;
        let bc1 = 1.0 - opts.beta1.powi(t);
        let bc2 = 1.0 - opts.beta2.powi(t);
        for i in 0..n {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * grad[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            model.params[i] -= lr * mh / (vh.sqrt() + opts.eps);
        }
        let last = step + 1 == opts.steps;
        if step % opts.log_every.max(1) == 0 || last {
            let held = last.then(|| heldout_loss(&model, heldout)).transpose()?;
            let entry = TrainLogEntry {
                step,
                train_loss: loss,
                lr,
                heldout_loss: held,
            };
            on_log(&entry);
            log.push(entry);
        }
    }
    if let Some(i) = model.params.iter().position(|p| !p.is_finite()) {
        return Err(Error::contract(format!(
            "training diverged: parameter {i} is not finite"
        )));
    }
    let final_loss = heldout_loss(&model, heldout)?;
    Ok((
        model,
        TrainReport {
            initial_heldout_loss: initial,
            final_heldout_loss: final_loss,
            log,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 12,
            trained_len: 8,
            seed: 1,
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = tiny_cfg();
        let model = TinyModel::init(cfg).unwrap();
        // Perturb away from the symmetric init so every tensor gets signal.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params: Vec<f64> = model
            .params()
            .iter()
            .map(|&p| p as f64 + rng.random_range(-0.3..0.3))
            .collect();
        let batch = vec![vec![0, 3, 1, 4, 1, 5], vec![2, 6, 5, 3]];
        let (_, grad) = loss_and_grad::<f64>(&cfg, &params, &batch).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let (up, _) = loss_and_grad::<f64>(&cfg, &p, &batch).unwrap();
            p[i] -= 2.0 * h;
            let (down, _) = loss_and_grad::<f64>(&cfg, &p, &batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn rejects_bad_training_inputs() {
        let cfg = ModelConfig {
            trained_len: 16,
            ..ModelConfig::default()
        };
        assert!(matches!(
            train(&[b'a'; 10], cfg, 10, 1e-3),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train(&[b'a'; 100], cfg, 0, 1e-3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let o = TrainOptions::new(1000, 1e-3);
        assert!(o.lr_at(0) < o.lr_at(50));
        assert!((o.lr_at(100) - 1e-3).abs() < 1e-9);
        assert!((o.lr_at(999) - 1e-4).abs() < 1e-6);
    }
}
