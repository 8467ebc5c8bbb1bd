//! The streaming multi-turn loop.
//!
//! Per turn: evict if the cache is over capacity, feed the user tokens,
//! answer (greedy generation or multiple-choice scoring), then decay the
//! entropy cache. Every token's entropy is measured from the logits the
//! previous step already produced, so scoring costs no extra forward pass.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::entropy::token_entropy;
use crate::error::{Error, Result};
use crate::kvcache::{
    evict, validate_eta, CacheBudget, EntropyCache, EvictionPolicy, EvictionStrategy, KvCacheStore,
    PolicyKind, SlotMeta,
};
use crate::tinylm::{forward_step, TinyModel};
use crate::tokenizer::{TokenId, Tokenizer};

/// In-turn growth allowed past capacity before an eviction fires mid-turn.
pub const MID_TURN_SLACK: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    /// Token whose next-token logit scores this option.
    pub label: TokenId,
    /// Tokens appended to the context when this option is chosen.
    pub text: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultipleChoice {
    pub options: Vec<McqOption>,
    pub answer_index: usize,
    /// Further options that count as correct, for renderings where equal
    /// answers end up with different texts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also_correct: Vec<usize>,
}

impl MultipleChoice {
    pub fn new(options: Vec<McqOption>, answer_index: usize) -> Result<Self> {
        let mcq = Self {
            options,
            answer_index,
            also_correct: Vec::new(),
        };
        mcq.validate()?;
        Ok(mcq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.options.len() < 2 {
            return Err(Error::input(
                "a multiple-choice question needs at least two options",
            ));
        }
        if self.answer_index >= self.options.len() {
            return Err(Error::input(format!(
                "answer index {} out of {} options",
                self.answer_index,
                self.options.len()
            )));
        }
        if self.also_correct.iter().any(|&i| i >= self.options.len()) {
            return Err(Error::input("accepted option index out of range"));
        }
        let mut labels: Vec<TokenId> = self.options.iter().map(|o| o.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.options.len() {
            return Err(Error::input("option labels must be unique"));
        }
        Ok(())
    }

    /// A choice counts as correct when its text equals the answer's text, so
    /// duplicated options are all correct.
    pub fn is_correct(&self, chosen: usize) -> bool {
        self.options[chosen].text == self.options[self.answer_index].text
            || self.also_correct.contains(&chosen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotInfo {
    pub requested: usize,
    pub used: usize,
}

impl FewShotInfo {
    pub fn short(&self) -> bool {
        self.used < self.requested
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user_tokens: Vec<TokenId>,
    /// Maximum generated tokens when the turn has no multiple-choice question.
    pub response_budget: usize,
    pub mcq: Option<MultipleChoice>,
    #[serde(default)]
    pub few_shot: Option<FewShotInfo>,
}

impl Turn {
    pub fn statement(user_tokens: Vec<TokenId>) -> Self {
        Self {
            user_tokens,
            response_budget: 0,
            mcq: None,
            few_shot: None,
        }
    }

    pub fn question(user_tokens: Vec<TokenId>, mcq: MultipleChoice) -> Self {
        Self {
            user_tokens,
            response_budget: 0,
            mcq: Some(mcq),
            few_shot: None,
        }
    }

    pub fn open(user_tokens: Vec<TokenId>, response_budget: usize) -> Self {
        Self {
            user_tokens,
            response_budget,
            mcq: None,
            few_shot: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub policy: EvictionPolicy,
    pub budget: CacheBudget,
    pub eta_decay: f64,
    pub reset_per_dialog: bool,
    pub few_shot_n: usize,
    /// Record the full entropy cache at the start of every turn.
    #[serde(default)]
    pub record_entropy: bool,
}

impl SessionConfig {
    /// The usual setup: `n_sink` sinks, the table split for `kind`, no
    /// few-shot exemplars, reset between dialogs.
    pub fn new(kind: PolicyKind, capacity: usize, n_sink: usize, eta_decay: f64) -> Result<Self> {
        let cfg = Self {
            policy: EvictionPolicy::new(kind),
            budget: CacheBudget::for_policy(kind, capacity, n_sink)?,
            eta_decay,
            reset_per_dialog: true,
            few_shot_n: 0,
            record_entropy: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        validate_eta(self.eta_decay)
    }

    fn mid_turn_limit(&self) -> usize {
        (self.budget.capacity as f64 * MID_TURN_SLACK).floor() as usize
    }
}

/// Entropy-cache entry captured at the start of a turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub original_position: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: u32,
    /// Cache size when the turn started.
    pub cache_before: usize,
    /// Cache size after the turn-start eviction (equal to `cache_before`
    /// when none fired).
    pub cache_after: usize,
    pub evicted_count: usize,
    /// Evictions forced inside the turn by the overflow rule.
    pub mid_turn_evictions: usize,
    pub cache_end: usize,
    /// Original positions and entropies of every token fed this turn
    /// (user tokens, then response tokens).
    pub token_positions: Vec<u64>,
    pub token_entropies: Vec<f64>,
    pub response_tokens: Vec<TokenId>,
    pub response_text: String,
    pub mcq_choice: Option<usize>,
    pub correct_flag: Option<bool>,
    pub few_shot: Option<FewShotInfo>,
    /// Digest of the entropy cache after entropies were appended, before decay.
    pub entropy_digest_pre_decay: String,
    pub entropy_digest_post_decay: String,
    pub entropy_snapshot: Option<Vec<ScoreEntry>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub turns: Vec<TurnRecord>,
}

impl SessionTranscript {
    pub fn mcq_accuracy(&self) -> Option<f64> {
        let flags: Vec<bool> = self.turns.iter().filter_map(|t| t.correct_flag).collect();
        (!flags.is_empty())
            .then(|| flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64)
    }

    /// JSON lines, one object per turn.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for t in &self.turns {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Picks the option whose label has the highest next-token logit; ties go
/// to the lower index.
pub fn score_multiple_choice(next_logits: &[f32], mcq: &MultipleChoice) -> Result<usize> {
    mcq.validate()?;
    let mut best: Option<(usize, f32)> = None;
    for (i, opt) in mcq.options.iter().enumerate() {
        let logit = *next_logits.get(opt.label as usize).ok_or_else(|| {
            Error::config(format!(
                "label token {} outside vocabulary of {}",
                opt.label,
                next_logits.len()
            ))
        })?;
        if best.is_none_or(|(_, b)| logit > b) {
            best = Some((i, logit));
        }
    }
    Ok(best.expect("at least two options").0)
}

/// A solved question usable as a few-shot exemplar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub question: Vec<TokenId>,
    pub answer: Vec<TokenId>,
}

impl Exemplar {
    pub fn from_turn(turn: &Turn) -> Option<Self> {
        let mcq = turn.mcq.as_ref()?;
        Some(Self {
            question: turn.user_tokens.clone(),
            answer: mcq.options[mcq.answer_index].text.clone(),
        })
    }
}

/// Prefixes every question turn with up to `n` of the most recent solved
/// questions before it (`bank` first, then earlier questions in `turns`).
/// Turns that get fewer than `n` exemplars are flagged.
pub fn prepend_few_shot(turns: &[Turn], n: usize, bank: &[Exemplar]) -> Vec<Turn> {
    if n == 0 {
        return turns.to_vec();
    }
    let mut history: Vec<Exemplar> = bank.to_vec();
    turns
        .iter()
        .map(|turn| {
            let Some(own) = Exemplar::from_turn(turn) else {
                return turn.clone();
            };
            let used = n.min(history.len());
            let mut tokens = Vec::new();
            for ex in &history[history.len() - used..] {
                tokens.extend_from_slice(&ex.question);
                tokens.extend_from_slice(&ex.answer);
                if ex.answer.last() != Some(&Tokenizer::NEWLINE) {
                    tokens.push(Tokenizer::NEWLINE);
                }
            }
            tokens.extend_from_slice(&turn.user_tokens);
            history.push(own);
            Turn {
                user_tokens: tokens,
                few_shot: Some(FewShotInfo { requested: n, used }),
                ..turn.clone()
            }
        })
        .collect()
}

/// One streaming conversation: a model, its cache, and the policy state.
pub struct Session<'m> {
    model: &'m TinyModel,
    config: SessionConfig,
    strategy: Box<dyn EvictionStrategy>,
    store: KvCacheStore,
    entropy: EntropyCache,
    next_logits: Vec<f32>,
    next_position: u64,
    turn_index: u32,
    started: bool,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m TinyModel, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model,
            config,
            strategy: config.policy.build(),
            store: KvCacheStore::for_model(model.config()),
            entropy: EntropyCache::new(),
            next_logits: crate::tinylm::empty_context(model),
            next_position: 0,
            turn_index: 0,
            started: false,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn store(&self) -> &KvCacheStore {
        &self.store
    }

    pub fn entropy_cache(&self) -> &EntropyCache {
        &self.entropy
    }

    /// Logits predicting the token after everything fed so far.
    pub fn next_logits(&self) -> &[f32] {
        &self.next_logits
    }

    pub fn turn_index(&self) -> u32 {
        self.turn_index
    }

    /// Drops all cached state. The eviction strategy keeps its generator, so
    /// a multi-dialog run stays a single deterministic stream.
    pub fn reset(&mut self) {
        self.store.clear(&mut self.entropy);
        self.next_logits = crate::tinylm::empty_context(self.model);
        self.next_position = 0;
        self.turn_index = 0;
        self.started = false;
    }

    fn evict_now(&mut self) -> Result<usize> {
        let before = self.store.len();
        evict(
            &mut self.store,
            &mut self.entropy,
            self.strategy.as_mut(),
            &self.config.budget,
        )?;
        Ok(before - self.store.len())
    }

    /// Feeds one token: measures its entropy from the pending logits, decodes
    /// it and appends its KV. Returns `(position, entropy)`.
    fn feed_token(&mut self, token: TokenId, mid_turn: &mut usize) -> Result<(u64, f64)> {
        if self.store.len() + 1 > self.config.mid_turn_limit() {
            self.evict_now()?;
            *mid_turn += 1;
        }
        let entropy = token_entropy(&self.next_logits, token);
        let out = forward_step(self.model, token, &self.store, false)?;
        let position = self.next_position;
        self.store.append(
            &mut self.entropy,
            &out.new_keys,
            &out.new_values,
            SlotMeta::new(position, entropy, self.turn_index),
        )?;
        self.next_position += 1;
        self.next_logits = out.logits;
        Ok((position, entropy))
    }

    /// Feeds tokens outside the turn structure (no eviction at the start, no
    /// decay at the end). Returns each token's entropy.
    pub fn feed(&mut self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let mut mid = 0;
        tokens
            .iter()
            .map(|&t| self.feed_token(t, &mut mid).map(|(_, e)| e))
            .collect()
    }

    pub fn run_turn(&mut self, turn: &Turn) -> Result<TurnRecord> {
        if turn.user_tokens.is_empty() {
            return Err(Error::input("a turn needs at least one user token"));
        }
        let vocab = self.model.config().vocab_size;
        if let Some(&bad) = turn.user_tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::input(format!(
                "token {bad} outside vocabulary of {vocab}"
            )));
        }
        let snapshot = self.config.record_entropy.then(|| {
            self.store
                .slots()
                .iter()
                .zip(self.entropy.scores())
                .map(|(s, &score)| ScoreEntry {
                    original_position: s.original_position,
                    score,
                })
                .collect()
        });

        let cache_before = self.store.len();
        let evicted_count = self.evict_now()?;
        let cache_after = self.store.len();

        let mut mid = 0;
        let mut positions = Vec::new();
        let mut entropies = Vec::new();
        let mut push = |(p, e): (u64, f64)| {
            positions.push(p);
            entropies.push(e);
        };
        if !self.started && (Tokenizer::BOS as usize) < vocab {
            push(self.feed_token(Tokenizer::BOS, &mut mid)?);
        }
        self.started = true;
        for &t in &turn.user_tokens {
            push(self.feed_token(t, &mut mid)?);
        }

        let mut response = Vec::new();
        let mut choice = None;
        let mut correct = None;
        if let Some(mcq) = &turn.mcq {
            let chosen = score_multiple_choice(&self.next_logits, mcq)?;
            choice = Some(chosen);
            correct = Some(mcq.is_correct(chosen));
            response = mcq.options[chosen].text.clone();
            for &t in &response {
                push(self.feed_token(t, &mut mid)?);
            }
        } else {
            for _ in 0..turn.response_budget {
                let next = argmax(&self.next_logits);
                response.push(next);
                push(self.feed_token(next, &mut mid)?);
                if next == Tokenizer::NEWLINE || next == Tokenizer::EOT {
                    break;
                }
            }
        }

        let pre = self.entropy.digest();
        self.entropy.decay(self.config.eta_decay)?;
        let record = TurnRecord {
            turn_index: self.turn_index,
            cache_before,
            cache_after,
            evicted_count,
            mid_turn_evictions: mid,
            cache_end: self.store.len(),
            token_positions: positions,
            token_entropies: entropies,
            response_text: Tokenizer.render(&response),
            response_tokens: response,
            mcq_choice: choice,
            correct_flag: correct,
            few_shot: turn.few_shot,
            entropy_digest_pre_decay: pre,
            entropy_digest_post_decay: self.entropy.digest(),
            entropy_snapshot: snapshot,
        };
        self.turn_index += 1;
        Ok(record)
    }
}

fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Runs one dialog from a fresh cache.
pub fn run_session(
    model: &TinyModel,
    turns: &[Turn],
    config: &SessionConfig,
) -> Result<SessionTranscript> {
    let mut session = Session::new(model, *config)?;
    let turns = prepend_few_shot(turns, config.few_shot_n, &[]);
    let records = turns
        .iter()
        .map(|t| session.run_turn(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(SessionTranscript { turns: records })
}

/// Runs several dialogs, clearing the cache between them when
/// `reset_per_dialog` is set and otherwise streaming them back to back.
pub fn run_dialogs(
    model: &TinyModel,
    dialogs: &[Vec<Turn>],
    config: &SessionConfig,
) -> Result<Vec<SessionTranscript>> {
    let mut session = Session::new(model, *config)?;
    let mut out = Vec::with_capacity(dialogs.len());
    for (i, dialog) in dialogs.iter().enumerate() {
        if i > 0 && config.reset_per_dialog {
            session.reset();
        }
        let turns = prepend_few_shot(dialog, config.few_shot_n, &[]);
        let records = turns
            .iter()
            .map(|t| session.run_turn(t))
            .collect::<Result<Vec<_>>>()?;
        out.push(SessionTranscript { turns: records });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(label: u8, text: &str) -> McqOption {
        McqOption {
            label: label as TokenId,
            text: Tokenizer.encode(text),
        }
    }

    #[test]
    fn mcq_picks_highest_label_logit() {
        let mut logits = vec![0.0f32; 260];
        logits[b'b' as usize] = 2.0;
        logits[b'c' as usize] = 1.0;
        let mcq =
            MultipleChoice::new(vec![opt(b'a', "a"), opt(b'b', "b"), opt(b'c', "c")], 1).unwrap();
        assert_eq!(score_multiple_choice(&logits, &mcq).unwrap(), 1);
    }

    #[test]
    fn mcq_ties_go_low() {
        let logits = vec![0.5f32; 260];
        let mcq = MultipleChoice::new(vec![opt(b'x', "x"), opt(b'y', "y")], 1).unwrap();
        assert_eq!(score_multiple_choice(&logits, &mcq).unwrap(), 0);
    }

    #[test]
    fn mcq_label_outside_vocab_is_config_error() {
        let logits = vec![0.0f32; 10];
        let mcq = MultipleChoice::new(vec![opt(1, "x"), opt(b'y', "y")], 0).unwrap();
        assert!(matches!(
            score_multiple_choice(&logits, &mcq),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mcq_validation() {
        assert!(MultipleChoice::new(vec![opt(b'a', "a")], 0).is_err());
        assert!(MultipleChoice::new(vec![opt(b'a', "a"), opt(b'a', "b")], 0).is_err());
        assert!(MultipleChoice::new(vec![opt(b'a', "a"), opt(b'b', "b")], 2).is_err());
        let same = MultipleChoice::new(vec![opt(b'a', "z"), opt(b'b', "z")], 1).unwrap();
        assert!(same.is_correct(0));
    }

    fn qturn(i: usize) -> Turn {
        let mcq = MultipleChoice::new(vec![opt(b'a', &format!("ans{i}\n")), opt(b'b', "no\n")], 0)
            .unwrap();
        Turn::question(Tokenizer.encode(format!("q{i}? ")), mcq)
    }

    #[test]
    fn few_shot_zero_is_identity() {
        let turns: Vec<Turn> = (0..3).map(qturn).collect();
        assert_eq!(prepend_few_shot(&turns, 0, &[]), turns);
    }

    #[test]
    fn few_shot_uses_preceding_questions() {
        let turns: Vec<Turn> = (1..=5).map(qturn).collect();
        let out = prepend_few_shot(&turns, 2, &[]);
        let fifth = Tokenizer.render(&out[4].user_tokens);
        assert_eq!(fifth, "q3? ans3\nq4? ans4\nq5? ");
        assert_eq!(
            out[0].few_shot,
            Some(FewShotInfo {
                requested: 2,
                used: 0
            })
        );
        assert!(out[0].few_shot.unwrap().short());
        assert_eq!(out[1].few_shot.unwrap().used, 1);
        assert!(!out[4].few_shot.unwrap().short());
        let three = prepend_few_shot(&turns, 3, &[]);
        let one = prepend_few_shot(&turns, 1, &[]);
        assert!(three[4].user_tokens.len() > one[4].user_tokens.len());
    }

    #[test]
    fn few_shot_draws_on_bank_first() {
        let bank = vec![Exemplar {
            question: Tokenizer.encode("b? "),
            answer: Tokenizer.encode("yes"),
        }];
        let out = prepend_few_shot(&[qturn(1)], 1, &bank);
        assert_eq!(Tokenizer.render(&out[0].user_tokens), "b? yes\nq1? ");
    }

    #[test]
    fn config_validation() {
        assert!(SessionConfig::new(PolicyKind::SinkEntropy, 512, 4, 0.0).is_err());
        let cfg = SessionConfig::new(PolicyKind::SinkEntropy, 512, 4, 0.7).unwrap();
        assert_eq!(cfg.budget.n_entropy, 508);
        assert_eq!(cfg.mid_turn_limit(), 768);
    }
}
