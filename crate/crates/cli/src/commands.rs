use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use kvsift::entropy::{attention_sink_profile, entropy_segment_analysis, sentences_from_text};
use kvsift::kvcache::{validate_eta, EvictionPolicy, PolicyKind};
use kvsift::session::{run_dialogs, SessionTranscript};
use kvsift::tasks::corpus::CorpusGen;
use kvsift::tasks::dialog::{read_dialogs, recall_dialogs, score_transcripts, DialogSet};
use kvsift::tasks::grocery::run_grocery;
use kvsift::tasks::ppl::stream_ppl_windowed;
use kvsift::tasks::results::ResultRow;
use kvsift::tasks::rps::{run_rps, run_rps_with, FixedAgent, Move, PlayerProfile, RpsReport};
use kvsift::tinylm::{train_with, TrainOptions};
use kvsift::{sequence_logprobs, ModelConfig, TinyModel, TokenId, Tokenizer};

use crate::common::{fan_out, load_model, parse_policies, read_input, session_config, write_atomic, write_rows};
use crate::config::{CacheSection, RunConfig};
use crate::error::usage;
use crate::{AnalyzeArgs, BenchArgs, CacheArgs, PplArgs, RpsArgs, SweepArgs, TrainArgs};

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_cache(cfg: &mut RunConfig, a: CacheArgs) {
    set(&mut cfg.cache.policies, a.policies);
    set(&mut cfg.cache.capacity, a.capacity);
    set(&mut cfg.cache.n_sink, a.n_sink);
    set(&mut cfg.session.eta, a.eta);
}

fn check_eta(eta: f64) -> anyhow::Result<()> {
    validate_eta(eta).map_err(|e| usage(e.to_string()))
}

pub fn train(mut cfg: RunConfig, a: TrainArgs, out: &Path) -> anyhow::Result<()> {
    set(&mut cfg.model.path, a.model.model);
    cfg.train.corpus = a.corpus.or(cfg.train.corpus);
    set(&mut cfg.train.corpus_bytes, a.corpus_bytes);
    set(&mut cfg.train.steps, a.steps);
    set(&mut cfg.train.lr, a.lr);
    set(&mut cfg.train.batch_size, a.batch_size);
    set(&mut cfg.model.seed, a.seed);
    set(&mut cfg.model.d_model, a.d_model);
    set(&mut cfg.model.n_heads, a.n_heads);
    set(&mut cfg.model.n_layers, a.n_layers);
    set(&mut cfg.model.d_ff, a.d_ff);
    set(&mut cfg.model.trained_len, a.trained_len);

    let corpus = match &cfg.train.corpus {
        Some(p) => read_input(p, "corpus")?,
        None => CorpusGen::new(0).corpus(cfg.train.corpus_bytes).into_bytes(),
    };
    let m = &cfg.model;
    let config = ModelConfig {
        d_model: m.d_model,
        n_heads: m.n_heads,
        n_layers: m.n_layers,
        d_ff: m.d_ff,
        trained_len: m.trained_len,
        seed: m.seed,
        ..ModelConfig::default()
    };
    let mut opts = TrainOptions::new(cfg.train.steps, cfg.train.lr);
    opts.batch_size = cfg.train.batch_size;
    opts.log_every = cfg.train.log_every.max(1);
    let (model, report) = train_with(&corpus, config, &opts, |e| {
        log::info!("step {} loss {:.4} lr {:.2e}", e.step, e.train_loss, e.lr);
    })?;
    if let Some(dir) = cfg.model.path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    model.save(&cfg.model.path).with_context(|| format!("saving {}", cfg.model.path.display()))?;

    let mut log = String::from("step,train_loss,lr,heldout_loss\n");
    for e in &report.log {
        let held = e.heldout_loss.map(|h| format!("{h:.6}")).unwrap_or_default();
        writeln!(log, "{},{:.6},{:.6e},{held}", e.step, e.train_loss, e.lr)?;
    }
    write_atomic(&out.join("train_log.csv"), log.as_bytes())?;
    write_atomic(&out.join("train_config.toml"), cfg.to_toml().as_bytes())?;
    println!(
        "trained {} parameters; held-out loss {:.4} -> {:.4}; model written to {}",
        model.n_params(),
        report.initial_heldout_loss,
        report.final_heldout_loss,
        cfg.model.path.display()
    );
    Ok(())
}

fn row(task: &str, policy: &str, cache: &CacheSection, eta: f64, metric: &str, value: f64, seed: u64) -> ResultRow {
    ResultRow {
        task: task.into(),
        policy: policy.into(),
        capacity: cache.capacity,
        eta,
        metric: metric.into(),
        value,
        seed,
    }
}

fn write_transcripts(path: &Path, transcripts: &[SessionTranscript]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    for t in transcripts {
        t.write_jsonl(&mut buf)?;
    }
    write_atomic(path, &buf)
}

/// Seeds for the random policy's generator; other policies run once.
fn repeat_seeds(kind: PolicyKind, cache: &CacheSection, repeats: usize) -> Vec<u64> {
    let n = if kind == PolicyKind::SinkRandom { repeats.max(1) } else { 1 };
    (0..n as u64).map(|r| cache.random_seed + r).collect()
}

pub fn bench(mut cfg: RunConfig, a: BenchArgs, out: &Path) -> anyhow::Result<()> {
    set(&mut cfg.model.path, a.model.model);
    apply_cache(&mut cfg, a.cache);
    set(&mut cfg.task.name, a.task);
    cfg.task.dialogs = a.dialogs.or(cfg.task.dialogs);
    set(&mut cfg.task.sessions, a.sessions);
    set(&mut cfg.task.filler, a.filler);
    set(&mut cfg.task.repeats, a.repeats);
    set(&mut cfg.task.seed, a.seed);
    set(&mut cfg.session.few_shot, a.few_shot);

    let kinds = parse_policies(&cfg.cache.policies)?;
    check_eta(cfg.session.eta)?;
    if cfg.task.repeats == 0 {
        return Err(usage("repeats must be at least 1"));
    }
    let task = cfg.task.name.clone();
    let dialogs = match task.as_str() {
        "grocery" => None,
        "dialog" => Some(match &cfg.task.dialogs {
            Some(p) => {
                let set = read_dialogs(read_input(p, "dialogs")?.as_slice())?;
                if set.dialogs.is_empty() {
                    anyhow::bail!("no usable dialogs in {} ({} skipped)", p.display(), set.skipped);
                }
                set
            }
            None => {
                let records = recall_dialogs(cfg.task.sessions, cfg.task.recall_gap, cfg.task.seed);
                let dialogs = records.iter().map(|r| r.to_turns()).collect::<kvsift::Result<Vec<_>>>()?;
                DialogSet { dialogs, skipped: 0 }
            }
        }),
        other => return Err(usage(format!("unknown task `{other}`; expected grocery or dialog"))),
    };
    let model = load_model(&cfg.model.path)?;
    let (eta, seed) = (cfg.session.eta, cfg.task.seed);

    let groups = fan_out(&kinds, |&kind| -> anyhow::Result<(Vec<ResultRow>, Vec<SessionTranscript>)> {
        let seeds = repeat_seeds(kind, &cfg.cache, cfg.task.repeats);
        let n = seeds.len() as f64;
        let mut sums: Vec<(&str, f64)> = Vec::new();
        let mut transcripts = Vec::new();
        for &rs in &seeds {
            let sc = session_config(kind, &cfg.cache, eta, cfg.session.few_shot, rs, true)?;
            let metrics: Vec<(&str, f64)> = match &dialogs {
                None => {
                    let r = run_grocery(&model, &sc, cfg.task.sessions, cfg.task.filler, seed)?;
                    if transcripts.is_empty() {
                        transcripts = r.transcripts;
                    }
                    vec![("filler_accuracy", r.filler_accuracy), ("recall_accuracy", r.recall_accuracy)]
                }
                Some(set) => {
                    let ts = run_dialogs(&model, &set.dialogs, &sc)?;
                    let r = score_transcripts(&ts, set.skipped);
                    if transcripts.is_empty() {
                        transcripts = ts;
                    }
                    vec![
                        ("accuracy", r.accuracy),
                        ("questions", r.n_questions as f64),
                        ("skipped", r.n_skipped as f64),
                        ("evicting_dialogs", r.n_evicting as f64),
                    ]
                }
            };
            if sums.is_empty() {
                sums = metrics.iter().map(|&(m, _)| (m, 0.0)).collect();
            }
            for (s, (_, v)) in sums.iter_mut().zip(metrics) {
                s.1 += v;
            }
        }
        let rows = sums.iter().map(|&(m, v)| row(&task, kind.name(), &cfg.cache, eta, m, v / n, seed)).collect();
        Ok((rows, transcripts))
    })?;

    let mut rows = Vec::new();
    for (kind, (r, ts)) in kinds.iter().zip(groups) {
        if a.transcripts {
            write_transcripts(&out.join(format!("transcript_{task}_{}.jsonl", kind.name())), &ts)?;
        }
        rows.extend(r);
    }
    write_rows(&out.join(format!("bench_{task}.csv")), &rows)?;
    print_rows(&rows);
    Ok(())
}

fn print_rows(rows: &[ResultRow]) {
    for r in rows {
        println!("{:<8} {:<9} {:<18} {:.4}", r.task, r.policy, r.metric, r.value);
    }
}

fn rps_rows(task: &str, policy: &str, cache: &CacheSection, eta: f64, seed: u64, r: &RpsReport) -> Vec<ResultRow> {
    vec![
        row(task, policy, cache, eta, "win_rate", r.win_rate(), seed),
        row(task, policy, cache, eta, "tie_rate", r.tie_rate(), seed),
        row(task, policy, cache, eta, "lose_rate", r.lose_rate(), seed),
    ]
}

pub fn rps(mut cfg: RunConfig, a: RpsArgs, out: &Path) -> anyhow::Result<()> {
    set(&mut cfg.model.path, a.model.model);
    apply_cache(&mut cfg, a.cache);
    set(&mut cfg.rps.player, a.player);
    set(&mut cfg.rps.rounds, a.rounds);
    set(&mut cfg.rps.seed, a.seed);
    cfg.rps.stub = a.stub.or(cfg.rps.stub);
    check_eta(cfg.session.eta)?;
    if cfg.rps.rounds == 0 {
        return Err(usage("rounds must be at least 1"));
    }
    let profile = PlayerProfile::preset(&cfg.rps.player, cfg.rps.seed)?;
    let task = format!("rps-{}", cfg.rps.player);
    let (eta, seed) = (cfg.session.eta, cfg.rps.seed);

    let rows = if let Some(stub) = &cfg.rps.stub {
        let mv = Move::parse(stub).ok_or_else(|| usage(format!("unknown move `{stub}`")))?;
        let r = run_rps_with(&mut FixedAgent(mv), &profile, cfg.rps.rounds)?;
        rps_rows(&task, &format!("stub-{mv}"), &cfg.cache, eta, seed, &r)
    } else {
        let kinds = parse_policies(&cfg.cache.policies)?;
        let model = load_model(&cfg.model.path)?;
        let groups = fan_out(&kinds, |&kind| {
            let sc = session_config(kind, &cfg.cache, eta, 0, cfg.cache.random_seed, false)?;
            let r = run_rps(&model, &profile, cfg.rps.rounds, &sc)?;
            Ok(rps_rows(&task, kind.name(), &cfg.cache, eta, seed, &r))
        })?;
        groups.into_iter().flatten().collect()
    };
    write_rows(&out.join("rps_results.csv"), &rows)?;
    print_rows(&rows);
    Ok(())
}

/// BOS followed by the first `tokens - 1` bytes of `text`.
fn stream_tokens(text: &[u8], tokens: usize) -> anyhow::Result<Vec<TokenId>> {
    if tokens < 2 || text.len() + 1 < tokens {
        return Err(kvsift::Error::Input(format!(
            "text has {} bytes; {} tokens were requested",
            text.len(),
            tokens
        ))
        .into());
    }
    Ok(std::iter::once(Tokenizer::BOS).chain(text[..tokens - 1].iter().map(|&b| b as TokenId)).collect())
}

/// Held-out synthetic text for a seed.
fn synthetic_text(seed: u64, bytes: usize) -> Vec<u8> {
    CorpusGen::new(seed).corpus(bytes).into_bytes()
}

pub fn ppl(mut cfg: RunConfig, a: PplArgs, out: &Path) -> anyhow::Result<()> {
    set(&mut cfg.model.path, a.model.model);
    set(&mut cfg.ppl.policies, a.policies);
    set(&mut cfg.ppl.capacity, a.capacity);
    cfg.ppl.text = a.text.or(cfg.ppl.text);
    set(&mut cfg.ppl.tokens, a.tokens);
    set(&mut cfg.ppl.window, a.window);
    let kinds = parse_policies(&cfg.ppl.policies)?;
    let text = match &cfg.ppl.text {
        Some(p) => read_input(p, "text")?,
        None => synthetic_text(cfg.ppl.seed, cfg.ppl.tokens + 256),
    };
    let model = load_model(&cfg.model.path)?;
    let stream = stream_tokens(&text, cfg.ppl.tokens)?;
    let p = &cfg.ppl;
    let cache = CacheSection { capacity: p.capacity, entropy_recent: p.entropy_recent, ..cfg.cache.clone() };
    let dense_len = model.config().trained_len.min(stream.len());
    let dense = sequence_logprobs(&model, &stream[..dense_len])?;
    let dense_log_ppl = -dense[1..].iter().sum::<f64>() / (dense_len - 1) as f64;

    let reports = fan_out(&kinds, |&kind| {
        let budget = crate::common::budget_for(kind, cache.capacity, cache.n_sink, cache.entropy_recent)?;
        Ok(stream_ppl_windowed(&model, &stream, &EvictionPolicy::with_seed(kind, cache.random_seed), &budget, p.window)?)
    })?;
    let trained = model.config().trained_len;
    let mut rows = Vec::new();
    for (kind, r) in kinds.iter().zip(&reports) {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        write_atomic(&out.join(format!("ppl_{}.csv", kind.name())), &buf)?;
        let name = kind.name();
        rows.push(row("ppl", name, &cache, 1.0, "mean_log_ppl", r.mean_log_ppl, p.seed));
        rows.push(row("ppl", name, &cache, 1.0, "max_windowed_pre", r.max_windowed(0..trained + 1).unwrap_or(0.0), p.seed));
        rows.push(row("ppl", name, &cache, 1.0, "max_windowed_post", r.max_windowed(trained + 1..usize::MAX).unwrap_or(0.0), p.seed));
        rows.push(row("ppl", name, &cache, 1.0, "dense_log_ppl", dense_log_ppl, p.seed));
    }
    write_rows(&out.join("ppl_results.csv"), &rows)?;
    print_rows(&rows);
    Ok(())
}

fn is_untrained(model: &TinyModel) -> bool {
    TinyModel::init(*model.config()).map(|init| init == *model).unwrap_or(false)
}

pub fn analyze(mut cfg: RunConfig, a: AnalyzeArgs, out: &Path) -> anyhow::Result<()> {
    set(&mut cfg.model.path, a.model.model);
    cfg.analyze.sentences = a.sentences.or(cfg.analyze.sentences);
    set(&mut cfg.analyze.n_sentences, a.n_sentences);
    cfg.analyze.allow_untrained |= a.allow_untrained;
    let an = &cfg.analyze;
    let model = load_model(&cfg.model.path)?;
    if !an.allow_untrained && is_untrained(&model) {
        return Err(usage("model is at its initial weights; train it first or pass --allow-untrained"));
    }
    let len = an.segment_len.max(an.profile_len);
    let text = match &an.sentences {
        Some(p) => read_input(p, "sentences")?,
        None => synthetic_text(an.seed, an.n_sentences * (len + 40)),
    };
    let sentences = sentences_from_text(&text, len, an.n_sentences);
    if sentences.len() < an.n_sentences || sentences.is_empty() {
        return Err(usage(format!(
            "text yields {} sentences of {len} tokens; {} needed",
            sentences.len(),
            an.n_sentences
        )));
    }
    let profile = attention_sink_profile(&model, &sentences, an.profile_len)?;
    let segments = entropy_segment_analysis(&model, &sentences, an.segment_len, an.segments)?;
    let mut buf = Vec::new();
    profile.write_csv(&mut buf)?;
    write_atomic(&out.join("sink_profile.csv"), &buf)?;
    buf.clear();
    segments.write_csv(&mut buf)?;
    write_atomic(&out.join("segments.csv"), &buf)?;
    let mut summary = format!("sentences: {}\nweights are post-softmax attention\n", sentences.len());
    for (l, r) in profile.received.iter().enumerate() {
        if let Some(w) = r.first() {
            writeln!(summary, "layer {l}: position-0 weight {w:.4}")?;
        }
    }
    summary.push_str(&segments.summary());
    write_atomic(&out.join("analysis_summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

/// Removes repeated values, keeping first occurrences.
pub fn dedup_etas(etas: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(etas.len());
    for &e in etas {
        if out.contains(&e) {
            log::warn!("duplicate eta {e} ignored");
            eprintln!("warning: duplicate eta {e} ignored");
        } else {
            out.push(e);
        }
    }
    out
}

pub fn sweep_decay(mut cfg: RunConfig, a: SweepArgs, out: &Path) -> anyhow::Result<()> {
    set(&mut cfg.model.path, a.model.model);
    set(&mut cfg.sweep.etas, a.etas);
    set(&mut cfg.cache.capacity, a.capacity);
    set(&mut cfg.task.sessions, a.sessions);
    set(&mut cfg.task.filler, a.filler);
    set(&mut cfg.task.seed, a.seed);
    if cfg.sweep.etas.is_empty() {
        return Err(usage("no decay ratios given"));
    }
    for &e in &cfg.sweep.etas {
        check_eta(e)?;
    }
    let etas = dedup_etas(&cfg.sweep.etas);
    let model = load_model(&cfg.model.path)?;
    let reports = fan_out(&etas, |&eta| {
        let sc = session_config(PolicyKind::SinkEntropy, &cfg.cache, eta, cfg.session.few_shot, cfg.cache.random_seed, true)?;
        Ok(run_grocery(&model, &sc, cfg.task.sessions, cfg.task.filler, cfg.task.seed)?)
    })?;
    let mut csv = String::from("eta,filler_accuracy,recall_accuracy\n");
    for (eta, r) in etas.iter().zip(&reports) {
        writeln!(csv, "{eta},{:.6},{:.6}", r.filler_accuracy, r.recall_accuracy)?;
    }
    write_atomic(&out.join("sweep_decay.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}
