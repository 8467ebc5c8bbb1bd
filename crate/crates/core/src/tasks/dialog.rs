//! Multi-turn dialogues that end in a multiple-choice question, read from
//! JSON lines.
//!
//! Record schema, one object per line:
//!
//! ```json
//! {"turns": ["A: hi.", "B: hello."], "options": ["fine", "blue"], "answer": 0,
//!  "question": "A: how are you? ", "labels": ["f", "b"]}
//! ```
//!
//! `turns` are fed one per turn, with a newline added when missing.
//! `question` is the prompt of the final turn; when absent the last entry of
//! `turns` is used instead. `labels` are single characters scored at the
//! next-token position; when absent the first characters of the options are
//! used if they are distinct, and otherwise the options are listed after the
//! question as `A. ...`, `B. ...` and scored by letter.

use std::io::BufRead;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{CorpusGen, FACT_KEYS, FACT_LETTERS};
use crate::error::{Error, Result};
use crate::session::{
    run_dialogs, McqOption, MultipleChoice, SessionConfig, SessionTranscript, Turn,
};
use crate::tinylm::TinyModel;
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogRecord {
    pub turns: Vec<String>,
    pub options: Vec<String>,
    pub answer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

fn with_newline(s: &str) -> String {
    if s.ends_with('\n') {
        s.to_string()
    } else {
        format!("{s}\n")
    }
}

impl DialogRecord {
    /// Converts the record into session turns.
    pub fn to_turns(&self) -> Result<Vec<Turn>> {
        let (context, question) = match &self.question {
            Some(q) => (&self.turns[..], q.clone()),
            None => match self.turns.split_last() {
                Some((q, rest)) => (rest, q.clone()),
                None => return Err(Error::input("dialog has no turns and no question")),
            },
        };
        if question.is_empty() {
            return Err(Error::input("empty question"));
        }
        if self.options.len() < 2 || self.options.iter().any(String::is_empty) {
            return Err(Error::input("need at least two non-empty options"));
        }
        let mut prompt = question;
        let (labels, texts): (Vec<TokenId>, Vec<String>) = match &self.labels {
            Some(ls) => {
                if ls.len() != self.options.len() || ls.iter().any(|l| l.len() != 1) {
                    return Err(Error::input(
                        "labels must be single characters, one per option",
                    ));
                }
                let labels = ls.iter().map(|l| l.as_bytes()[0] as TokenId).collect();
                (
                    labels,
                    self.options.iter().map(|o| with_newline(o)).collect(),
                )
            }
            None => {
                let firsts: Vec<TokenId> = self
                    .options
                    .iter()
                    .map(|o| o.as_bytes()[0] as TokenId)
                    .collect();
                let mut uniq = firsts.clone();
                uniq.sort_unstable();
                uniq.dedup();
                if uniq.len() == firsts.len() {
                    (
                        firsts,
                        self.options.iter().map(|o| with_newline(o)).collect(),
                    )
                } else {
                    if self.options.len() > 26 {
                        return Err(Error::input("too many options to letter"));
                    }
                    let letters: Vec<char> = ('A'..='Z').take(self.options.len()).collect();
                    prompt.push('\n');
                    for (l, o) in letters.iter().zip(&self.options) {
                        prompt.push_str(&format!("{l}. {o}\n"));
                    }
                    prompt.push_str("answer: ");
                    let texts = letters
                        .iter()
                        .zip(&self.options)
                        .map(|(l, o)| format!("{l}. {}", with_newline(o)))
                        .collect();
                    (letters.iter().map(|&c| c as TokenId).collect(), texts)
                }
            }
        };
        let options = labels
            .into_iter()
            .zip(texts)
            .map(|(label, text)| McqOption {
                label,
                text: Tokenizer.encode(text),
            })
            .collect();
        let mut mcq = MultipleChoice::new(options, self.answer)?;
        mcq.also_correct = (0..self.options.len())
            .filter(|&i| i != self.answer && self.options[i] == self.options[self.answer])
            .collect();
        let mut turns: Vec<Turn> = context
            .iter()
            .filter(|t| !t.is_empty())
            .map(|t| Turn::statement(Tokenizer.encode(with_newline(t))))
            .collect();
        turns.push(Turn::question(Tokenizer.encode(prompt), mcq));
        Ok(turns)
    }
}

/// Parsed dialogues plus the number of lines that were skipped.
#[derive(Debug, Clone, Default)]
pub struct DialogSet {
    pub dialogs: Vec<Vec<Turn>>,
    pub skipped: usize,
}

/// Reads JSON lines. Blank lines are ignored; malformed records are logged
/// and counted, not fatal.
pub fn read_dialogs(reader: impl BufRead) -> Result<DialogSet> {
    let mut set = DialogSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<DialogRecord>(&line)
            .map_err(Error::from)
            .and_then(|r| r.to_turns());
        match parsed {
            Ok(turns) => set.dialogs.push(turns),
            Err(e) => {
                log::warn!("skipping dialog on line {}: {e}", i + 1);
                set.skipped += 1;
            }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogMcqReport {
    pub accuracy: f64,
    pub n_dialogs: usize,
    pub n_questions: usize,
    pub n_correct: usize,
    pub n_skipped: usize,
    /// Dialogs in which at least one eviction fired.
    pub n_evicting: usize,
}

pub fn score_transcripts(transcripts: &[SessionTranscript], skipped: usize) -> DialogMcqReport {
    let flags: Vec<bool> = transcripts
        .iter()
        .flat_map(|t| t.turns.iter().filter_map(|r| r.correct_flag))
        .collect();
    let n_correct = flags.iter().filter(|&&c| c).count();
    DialogMcqReport {
        accuracy: if flags.is_empty() {
            0.0
        } else {
            n_correct as f64 / flags.len() as f64
        },
        n_dialogs: transcripts.len(),
        n_questions: flags.len(),
        n_correct,
        n_skipped: skipped,
        n_evicting: transcripts
            .iter()
            .filter(|t| {
                t.turns
                    .iter()
                    .any(|r| r.evicted_count > 0 || r.mid_turn_evictions > 0)
            })
            .count(),
    }
}

pub fn run_dialog_set(
    model: &TinyModel,
    set: &DialogSet,
    config: &SessionConfig,
) -> Result<DialogMcqReport> {
    let transcripts = run_dialogs(model, &set.dialogs, config)?;
    Ok(score_transcripts(&transcripts, set.skipped))
}

pub fn run_dialog_mcq(
    model: &TinyModel,
    dialogs: impl BufRead,
    config: &SessionConfig,
) -> Result<DialogMcqReport> {
    run_dialog_set(model, &read_dialogs(dialogs)?, config)
}

/// Dialogues that state one key/code fact, pad with filler lines until at
/// least `min_bytes` of dialogue follow the fact, and then ask for the value.
/// Filler never contains `=`, so the fact is the only place the answer can
/// be copied from.
pub fn recall_dialogs(n: usize, min_bytes: usize, seed: u64) -> Vec<DialogRecord> {
    let mut gen = CorpusGen::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n)
        .map(|_| {
            let key = *FACT_KEYS.choose(&mut rng).expect("non-empty");
            let mut firsts: Vec<u8> = FACT_LETTERS.to_vec();
            firsts.shuffle(&mut rng);
            let codes: Vec<String> = firsts[..4]
                .iter()
                .map(|&f| gen.fact_code(Some(f)))
                .collect();
            let value = &codes[0];
            let mut turns = vec![format!("A: {key}={value}.")];
            let mut bytes = 0;
            while bytes < min_bytes {
                let line = gen.filler_line();
                bytes += line.len();
                turns.push(line.trim_end().to_string());
            }
            let mut options = codes.clone();
            let answer = rng.random_range(0..4);
            options.swap(0, answer);
            DialogRecord {
                turns,
                options,
                answer,
                question: Some(format!("A: so {key}=")),
                labels: None,
            }
        })
        .collect()
}

pub fn write_dialogs(records: &[DialogRecord], mut out: impl std::io::Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
