use std::ops::Range;

use super::ModelConfig;

/// Offsets of one block's tensors inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub attn_norm: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub mlp_norm: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Declaration order of every parameter tensor. The model file stores the
/// tensors in exactly this order.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub tok_emb: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub final_norm: Range<usize>,
    pub lm_head: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let mut cursor = 0;
        let mut take = |n: usize| {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };
        let tok_emb = take(v * d);
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockLayout {
                attn_norm: take(d),
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                mlp_norm: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let final_norm = take(d);
        let lm_head = take(d * v);
        Self {
            tok_emb,
            blocks,
            final_norm,
            lm_head,
            total: cursor,
        }
    }

    /// `(name, range)` for every tensor, in declaration order.
    pub fn tensors(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![("tok_emb".to_string(), self.tok_emb.clone())];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, r) in [
                ("attn_norm", &b.attn_norm),
                ("wq", &b.wq),
                ("wk", &b.wk),
                ("wv", &b.wv),
                ("wo", &b.wo),
                ("mlp_norm", &b.mlp_norm),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ] {
                out.push((format!("blocks.{i}.{name}"), r.clone()));
            }
        }
        out.push(("final_norm".to_string(), self.final_norm.clone()));
        out.push(("lm_head".to_string(), self.lm_head.clone()));
        out
    }

    /// Ranges holding norm gains (initialized to one).
    pub fn is_gain(&self, name: &str) -> bool {
        name.ends_with("norm")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensors_tile_the_parameter_vector() {
        let cfg = ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 12,
            trained_len: 8,
            seed: 0,
        };
        let layout = ParamLayout::new(&cfg);
        let mut next = 0;
        for (_, r) in layout.tensors() {
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, layout.total);
    }
}
