//! The run configuration file: TOML with one section per concern. Every key
//! is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::usage;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub cache: CacheSection,
    pub session: SessionSection,
    pub task: TaskSection,
    pub rps: RpsSection,
    pub ppl: PplSection,
    pub analyze: AnalyzeSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub path: PathBuf,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub trained_len: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { path: "model.tlm".into(), d_model: 64, n_heads: 4, n_layers: 2, d_ff: 256, trained_len: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Raw-byte corpus; the bundled synthetic corpus when unset.
    pub corpus: Option<PathBuf>,
    /// Size of the synthetic corpus used when `corpus` is unset.
    pub corpus_bytes: usize,
    pub steps: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { corpus: None, corpus_bytes: 100_000, steps: 2000, lr: 3e-3, batch_size: 16, log_every: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheSection {
    pub capacity: usize,
    pub n_sink: usize,
    pub policies: Vec<String>,
    /// Recent slots kept by the entropy policy; the rest of the non-sink
    /// budget is entropy-selected.
    pub entropy_recent: usize,
    pub random_seed: u64,
}

impl Default for CacheSection {
    fn default() -> Self {
        Self {
            capacity: 512,
            n_sink: 4,
            policies: ["stream", "random", "interval", "sirllm"].map(String::from).to_vec(),
            entropy_recent: 0,
            random_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionSection {
    pub eta: f64,
    pub few_shot: usize,
}

impl Default for SessionSection {
    fn default() -> Self {
        Self { eta: 1.0, few_shot: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    /// `grocery` or `dialog`.
    pub name: String,
    /// JSON-lines dialogues for the dialog task; synthetic recall dialogues
    /// when unset.
    pub dialogs: Option<PathBuf>,
    pub sessions: usize,
    pub filler: usize,
    /// Bytes of filler after the fact in synthetic recall dialogues.
    pub recall_gap: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self { name: "grocery".into(), dialogs: None, sessions: 50, filler: 20, recall_gap: 600, repeats: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpsSection {
    /// `rock`, `paper` or `scissors`.
    pub player: String,
    pub rounds: usize,
    pub seed: u64,
    /// Play a fixed move instead of querying the model.
    pub stub: Option<String>,
}

impl Default for RpsSection {
    fn default() -> Self {
        Self { player: "rock".into(), rounds: 2000, seed: 0, stub: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PplSection {
    /// Raw-byte text; held-out synthetic text when unset.
    pub text: Option<PathBuf>,
    pub tokens: usize,
    pub capacity: usize,
    pub window: usize,
    pub entropy_recent: usize,
    pub policies: Vec<String>,
    pub seed: u64,
}

impl Default for PplSection {
    fn default() -> Self {
        Self {
            text: None,
            tokens: 4096,
            capacity: 64,
            window: 32,
            entropy_recent: 30,
            policies: ["window", "stream", "sirllm"].map(String::from).to_vec(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    /// Raw-byte text to cut sentences from; held-out synthetic text when unset.
    pub sentences: Option<PathBuf>,
    pub n_sentences: usize,
    pub profile_len: usize,
    pub segment_len: usize,
    pub segments: usize,
    pub allow_untrained: bool,
    pub seed: u64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            sentences: None,
            n_sentences: 256,
            profile_len: 20,
            segment_len: 40,
            segments: 4,
            allow_untrained: false,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub etas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { etas: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.train.corpus = Some("corpus.txt".into());
        c.rps.stub = Some("paper".into());
        c.sweep.etas = vec![0.5, 1.0];
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c: RunConfig = toml::from_str("[cache]\ncapacity = 128\n").unwrap();
        assert_eq!(c.cache.capacity, 128);
        assert_eq!(c.cache.n_sink, 4);
        assert_eq!(c.model, ModelSection::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[cache]\ncapacty = 128\n").is_err());
        assert!(toml::from_str::<RunConfig>("[caches]\n").is_err());
    }
}
