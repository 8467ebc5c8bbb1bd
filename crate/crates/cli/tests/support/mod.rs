#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use kvsift::tasks::corpus::CorpusGen;
use kvsift::tinylm::{heldout_loss, train_with, ModelConfig, TinyModel, TrainOptions};

/// Synthetic text the toy model is trained on. Large enough that the model
/// cannot memorize it, so copying from context is the cheaper way to fit.
pub const TOY_CORPUS_BYTES: usize = 3_000_000;
pub const TOY_STEPS: usize = 8000;
pub const TOY_LR: f32 = 3e-3;

pub fn toy_config() -> ModelConfig {
    ModelConfig { d_model: 64, n_heads: 4, n_layers: 2, d_ff: 256, trained_len: 64, seed: 0, ..ModelConfig::default() }
}

pub fn toy_corpus() -> String {
    CorpusGen::new(0).corpus(TOY_CORPUS_BYTES)
}

/// Loss on a fixed slice, stored next to the cached model. A mismatch on
/// load means the forward pass changed and the model is retrained.
fn fingerprint(model: &TinyModel, corpus: &[u8]) -> anyhow::Result<f64> {
    Ok(heldout_loss(model, &corpus[..4096])?)
}

fn train_toy() -> anyhow::Result<TinyModel> {
    let corpus = toy_corpus();
    let config = toy_config();
    let mut opts = TrainOptions::new(TOY_STEPS, TOY_LR);
    opts.log_every = 1000;

    let mut h = DefaultHasher::new();
    corpus.hash(&mut h);
    format!("{config:?}{opts:?}").hash(&mut h);
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let path = dir.join(format!("toy-{:016x}.tlm", h.finish()));
    let stamp = path.with_extension("loss");

    if let (Ok(model), Ok(saved)) = (TinyModel::load(&path), std::fs::read_to_string(&stamp)) {
        if saved.trim().parse::<f64>().ok() == Some(fingerprint(&model, corpus.as_bytes())?) {
            return Ok(model);
        }
    }
    eprintln!("training the toy model ({TOY_STEPS} steps); cached at {}", path.display());
    let (model, report) = train_with(corpus.as_bytes(), config, &opts, |e| {
        if let Some(held) = e.heldout_loss {
            eprintln!("  step {:>5} train {:.3} held-out {held:.3}", e.step, e.train_loss);
        }
    })?;
    eprintln!("  held-out loss {:.3} -> {:.3}", report.initial_heldout_loss, report.final_heldout_loss);
    let tmp = path.with_extension("tmp");
    model.save(&tmp)?;
    std::fs::rename(&tmp, &path)?;
    std::fs::write(&stamp, format!("{:?}\n", fingerprint(&model, corpus.as_bytes())?))?;
    Ok(model)
}

/// The trained toy model shared by the model-backed criteria. Trained once
/// and cached under the target directory.
pub fn toy_model() -> anyhow::Result<&'static TinyModel> {
    static MODEL: OnceLock<TinyModel> = OnceLock::new();
    if let Some(m) = MODEL.get() {
        return Ok(m);
    }
    let m = train_toy()?;
    Ok(MODEL.get_or_init(|| m))
}

/// Runs the CLI with `dir` as the output directory and fails on a non-zero
/// exit.
pub fn run_cli(dir: &Path, args: &[&str]) -> anyhow::Result<Output> {
    let out = Command::new(env!("CARGO_BIN_EXE_kvsift"))
        .current_dir(dir)
        .args(args)
        .args(["--out-dir", "."])
        .env_remove("KVSIFT_OUT_DIR")
        .output()?;
    if !out.status.success() {
        anyhow::bail!("kvsift {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    }
    Ok(out)
}

/// File name to bytes for every file directly under `dir`.
pub fn dir_contents(dir: &Path) -> anyhow::Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            files.insert(entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path())?);
        }
    }
    Ok(files)
}
