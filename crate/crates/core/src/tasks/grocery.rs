//! Announce a shopping list, ask unrelated questions, then ask for the list.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{COMMONSENSE, ITEMS};
use crate::error::{Error, Result};
use crate::session::{
    prepend_few_shot, McqOption, MultipleChoice, Session, SessionConfig, SessionTranscript, Turn,
};
use crate::tinylm::TinyModel;
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_FILLER: usize = 20;
pub const LIST_LEN: usize = 3;
pub const N_OPTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrocerySession {
    pub target_items: Vec<String>,
    pub announce: Turn,
    pub filler_questions: Vec<Turn>,
    pub recall_question: Turn,
}

impl GrocerySession {
    pub fn turns(&self) -> Vec<Turn> {
        let mut out = Vec::with_capacity(self.filler_questions.len() + 2);
        out.push(self.announce.clone());
        out.extend(self.filler_questions.iter().cloned());
        out.push(self.recall_question.clone());
        out
    }

    pub fn recall_mcq(&self) -> &MultipleChoice {
        self.recall_question
            .mcq
            .as_ref()
            .expect("recall turn carries a question")
    }
}

fn initial(s: &str) -> TokenId {
    s.as_bytes()[0] as TokenId
}

fn check_initials<'a>(what: &str, words: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = Vec::new();
    for w in words {
        if w.is_empty() {
            return Err(Error::config(format!("empty entry in the {what} bank")));
        }
        if seen.contains(&initial(w)) {
            return Err(Error::config(format!(
                "{what} bank entries need distinct first letters (`{w}`)"
            )));
        }
        seen.push(initial(w));
    }
    Ok(())
}

/// Builds a multiple-choice turn whose options are labelled by their first
/// byte; `correct` is placed at a random index.
fn mcq_turn(
    rng: &mut ChaCha8Rng,
    prompt: String,
    correct: String,
    distractors: Vec<String>,
) -> Turn {
    let mut texts = distractors;
    let answer_index = rng.random_range(0..=texts.len());
    texts.insert(answer_index, correct);
    let options = texts
        .iter()
        .map(|t| McqOption {
            label: initial(t),
            text: Tokenizer.encode(t),
        })
        .collect();
    Turn::question(
        Tokenizer.encode(prompt),
        MultipleChoice {
            options,
            answer_index,
            also_correct: Vec::new(),
        },
    )
}

/// One commonsense question in the corpus format, answered by the first
/// letter of the answer word.
pub fn commonsense_question(rng: &mut ChaCha8Rng, bank: &[(&str, &str)]) -> Result<Turn> {
    if bank.len() < N_OPTIONS {
        return Err(Error::config(format!(
            "question bank needs at least {N_OPTIONS} entries"
        )));
    }
    check_initials("answer", bank.iter().map(|q| q.1))?;
    let (stem, answer) = *bank.choose(rng).expect("non-empty");
    let others: Vec<&str> = bank.iter().map(|q| q.1).filter(|&a| a != answer).collect();
    let distractors = others
        .choose_multiple(rng, N_OPTIONS - 1)
        .map(|a| format!("{a}.\n"))
        .collect();
    Ok(mcq_turn(
        rng,
        format!("question: {stem} "),
        format!("{answer}.\n"),
        distractors,
    ))
}

pub fn generate_grocery_session(
    item_bank: &[&str],
    question_bank: &[(&str, &str)],
    n_filler: usize,
    seed: u64,
) -> Result<GrocerySession> {
    if item_bank.len() < LIST_LEN + N_OPTIONS - 1 {
        return Err(Error::config(format!(
            "item bank has {} items; at least {} are needed",
            item_bank.len(),
            LIST_LEN + N_OPTIONS - 1
        )));
    }
    check_initials("item", item_bank.iter().copied())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = item_bank.to_vec();
    items.shuffle(&mut rng);
    let target: Vec<&str> = items[..LIST_LEN].to_vec();
    let list = target.join(" ");
    let announce = Turn::statement(Tokenizer.encode(format!("A: buy={list}.\n")));

    let filler_questions = (0..n_filler)
        .map(|_| commonsense_question(&mut rng, question_bank))
        .collect::<Result<Vec<_>>>()?;

    // each distractor starts with an item the target does not start with,
    // so labels stay unique and every distractor differs in at least one item
    let firsts: Vec<&str> = items[LIST_LEN..]
        .choose_multiple(&mut rng, N_OPTIONS - 1)
        .copied()
        .collect();
    let distractors = firsts
        .iter()
        .map(|&first| {
            let mut rest: Vec<&str> = item_bank.iter().copied().filter(|&i| i != first).collect();
            rest.shuffle(&mut rng);
            let mut l = vec![first];
            l.extend_from_slice(&rest[..LIST_LEN - 1]);
            format!("{}\n", l.join(" "))
        })
        .collect();
    let recall_question = mcq_turn(
        &mut rng,
        "A: so buy=".to_string(),
        format!("{list}\n"),
        distractors,
    );

    Ok(GrocerySession {
        target_items: target.iter().map(|s| s.to_string()).collect(),
        announce,
        filler_questions,
        recall_question,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroceryReport {
    pub sessions: usize,
    pub filler_accuracy: f64,
    pub recall_accuracy: f64,
    #[serde(skip)]
    pub transcripts: Vec<SessionTranscript>,
}

/// Runs `n_sessions` sessions built from seeds `seed, seed + 1, ...` over
/// the bundled banks, each from a fresh cache.
pub fn run_grocery(
    model: &TinyModel,
    config: &SessionConfig,
    n_sessions: usize,
    n_filler: usize,
    seed: u64,
) -> Result<GroceryReport> {
    if n_sessions == 0 {
        return Err(Error::config("at least one session is needed"));
    }
    let (mut filler, mut filler_n, mut recall) = (0usize, 0usize, 0usize);
    let mut session = Session::new(model, *config)?;
    let mut transcripts = Vec::with_capacity(n_sessions);
    for i in 0..n_sessions {
        let g =
            generate_grocery_session(ITEMS, COMMONSENSE, n_filler, seed.wrapping_add(i as u64))?;
        session.reset();
        let mut turns = prepend_few_shot(&g.turns(), config.few_shot_n, &[]);
        let recall_turn = turns.pop().expect("recall turn");
        let mut records = Vec::with_capacity(turns.len() + 1);
        for t in &turns {
            let r = session.run_turn(t)?;
            if let Some(c) = r.correct_flag {
                filler_n += 1;
                filler += usize::from(c);
            }
            records.push(r);
        }
        let r = session.run_turn(&recall_turn)?;
        recall += usize::from(r.correct_flag == Some(true));
        records.push(r);
        transcripts.push(SessionTranscript { turns: records });
    }
    Ok(GroceryReport {
        sessions: n_sessions,
        filler_accuracy: if filler_n == 0 {
            0.0
        } else {
            filler as f64 / filler_n as f64
        },
        recall_accuracy: recall as f64 / n_sessions as f64,
        transcripts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_layout() {
        let s = generate_grocery_session(ITEMS, COMMONSENSE, DEFAULT_FILLER, 1).unwrap();
        assert_eq!(s.turns().len(), 22);
        let z = generate_grocery_session(ITEMS, COMMONSENSE, 0, 1).unwrap();
        let turns = z.turns();
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[1], z.recall_question);
    }

    #[test]
    fn seeded() {
        let a = generate_grocery_session(ITEMS, COMMONSENSE, 5, 9).unwrap();
        assert_eq!(
            a,
            generate_grocery_session(ITEMS, COMMONSENSE, 5, 9).unwrap()
        );
        assert_ne!(
            a,
            generate_grocery_session(ITEMS, COMMONSENSE, 5, 10).unwrap()
        );
    }

    #[test]
    fn recall_options() {
        for seed in 0..50 {
            let s = generate_grocery_session(ITEMS, COMMONSENSE, 2, seed).unwrap();
            let mcq = s.recall_mcq();
            mcq.validate().unwrap();
            let answer = Tokenizer.decode(&mcq.options[mcq.answer_index].text);
            assert_eq!(
                String::from_utf8(answer).unwrap(),
                format!("{}\n", s.target_items.join(" "))
            );
            for (i, o) in mcq.options.iter().enumerate() {
                if i != mcq.answer_index {
                    let text = String::from_utf8(Tokenizer.decode(&o.text)).unwrap();
                    let items: Vec<&str> = text.trim_end().split(' ').collect();
                    assert!(items
                        .iter()
                        .any(|it| !s.target_items.iter().any(|t| t == it)));
                }
            }
            for q in &s.filler_questions {
                q.mcq.as_ref().unwrap().validate().unwrap();
            }
        }
    }

    #[test]
    fn small_banks_rejected() {
        assert!(matches!(
            generate_grocery_session(&ITEMS[..5], COMMONSENSE, 1, 0),
            Err(Error::Config(_))
        ));
        assert!(generate_grocery_session(
            &["apple", "avocado", "b", "c", "d", "e"],
            COMMONSENSE,
            1,
            0
        )
        .is_err());
        assert!(generate_grocery_session(ITEMS, &COMMONSENSE[..2], 1, 0).is_err());
    }
}
