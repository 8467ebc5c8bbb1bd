use kvsift::kvcache::{EntropyCache, KvCacheStore, SlotMeta};
use kvsift::tasks::corpus::CorpusGen;
use kvsift::tinylm::{forward_step, heldout_loss, train, train_with, ModelConfig, TinyModel, TrainOptions};
use kvsift::Tokenizer;

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig { d_model: 16, n_heads: 2, n_layers: 2, d_ff: 32, trained_len: 32, seed, ..ModelConfig::default() }
}

#[test]
fn same_seed_gives_identical_weight_files() {
    let corpus = CorpusGen::new(1).corpus(20_000);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.tlm"), dir.path().join("b.tlm"));
    train(corpus.as_bytes(), tiny_config(5), 40, 3e-3).unwrap().save(&a).unwrap();
    train(corpus.as_bytes(), tiny_config(5), 40, 3e-3).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = train(corpus.as_bytes(), tiny_config(6), 40, 3e-3).unwrap();
    assert_ne!(c.to_bytes(), std::fs::read(&a).unwrap());
    let loaded = TinyModel::load(&a).unwrap();
    assert_eq!(loaded.to_bytes(), std::fs::read(&a).unwrap());
}

/// 100 KB of corpus text, d_model 64, four layers and four heads, 2000
/// steps: held-out loss must drop below the untrained model's.
#[test]
fn training_lowers_heldout_loss() {
    let corpus = CorpusGen::new(2).corpus(100_000);
    let cfg = ModelConfig { d_model: 64, n_heads: 4, n_layers: 4, d_ff: 256, trained_len: 64, seed: 2, ..ModelConfig::default() };
    let mut opts = TrainOptions::new(2000, 3e-3);
    opts.log_every = 500;
    let (model, report) = train_with(corpus.as_bytes(), cfg, &opts, |_| {}).unwrap();
    let untrained = TinyModel::init(cfg).unwrap();
    // the trainer holds out the last tenth of whatever length was generated
    let held = (corpus.len() as f64 * 0.1) as usize;
    let tail = &corpus.as_bytes()[corpus.len() - held..];
    let before = heldout_loss(&untrained, tail).unwrap();
    let after = heldout_loss(&model, tail).unwrap();
    assert!(after < before, "held-out loss {after} not below {before}");
    assert!((report.initial_heldout_loss - before).abs() < 1e-9);
    assert!(report.final_heldout_loss < report.initial_heldout_loss);
}

#[test]
fn attention_rows_are_distributions() {
    let corpus = CorpusGen::new(3).corpus(20_000);
    let model = train(corpus.as_bytes(), tiny_config(7), 30, 3e-3).unwrap();
    let mut store = KvCacheStore::for_model(model.config());
    let mut e = EntropyCache::new();
    for (i, t) in Tokenizer.encode("A: hello there, how are you today?\n").into_iter().enumerate() {
        let out = forward_step(&model, t, &store, true).unwrap();
        let cap = out.attention.as_ref().unwrap();
        assert_eq!(cap.query_position, i);
        assert_eq!(cap.key_positions, (0..i).collect::<Vec<_>>());
        for layer in &cap.weights {
            for head in layer {
                assert_eq!(head.len(), i + 1);
                assert!(head.iter().all(|&w| w >= 0.0));
                assert!((head.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
        store.append(&mut e, &out.new_keys, &out.new_values, SlotMeta::new(i as u64, 0.0, 0)).unwrap();
    }
}
