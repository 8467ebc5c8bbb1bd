//! Deterministic synthetic text used to train the toy model and to build the
//! evaluation sessions.
//!
//! The text mixes short dialogue lines: small talk, fixed commonsense facts
//! (`grass is green.`), key/value facts that are stated and soon repeated
//! (`code=Q`, `buy=milk eggs rice`), random words echoed back, and
//! rock-paper-scissors rounds. Repetition inside short windows is what
//! teaches the model to copy from its context.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: &[&str] = &[
    "sam", "ana", "li", "omar", "kate", "raj", "mia", "tom", "eva", "noah", "zoe", "ivan",
];

pub const PLACES: &[&str] = &[
    "the park",
    "the office",
    "the market",
    "school",
    "the beach",
    "the library",
    "the gym",
    "the station",
    "the cafe",
    "the river",
];

pub const ACTIVITIES: &[&str] = &[
    "read a book",
    "went for a walk",
    "cooked dinner",
    "watched a film",
    "played chess",
    "cleaned the house",
    "called my mother",
    "fixed the bike",
    "wrote a letter",
    "took a nap",
];

pub const FEELINGS: &[&str] = &["fine", "good", "tired", "happy", "busy", "great", "okay"];

/// Grocery items with pairwise distinct first letters.
pub const ITEMS: &[&str] = &[
    "apples", "bread", "cheese", "dates", "eggs", "flour", "grapes", "honey", "jam", "kale",
    "lemons", "milk", "nuts", "oats", "pears", "rice", "salt", "tea", "yogurt",
];

/// Keys used for single-letter key/value facts.
pub const FACT_KEYS: &[&str] = &["code", "pin", "door", "room", "seat", "gate", "desk", "box"];

/// Letters that make up fact codes.
pub const FACT_LETTERS: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ";

pub const CODE_LEN: std::ops::RangeInclusive<usize> = 3..=5;

/// `(stem, answer)` commonsense facts; answers have distinct first letters.
pub const COMMONSENSE: &[(&str, &str)] = &[
    ("grass is", "green"),
    ("the sky is", "blue"),
    ("snow is", "white"),
    ("fire is", "hot"),
    ("ice is", "cold"),
    ("a cat says", "meow"),
    ("the sea is", "salty"),
    ("night is", "dark"),
    ("a lemon is", "yellow"),
    ("a rock is", "rigid"),
    ("a fox is", "quick"),
    ("a feather is", "light"),
    ("an owl is", "nocturnal"),
    ("an ant is", "tiny"),
    ("a knife is", "keen"),
    ("a tomato is", "plump"),
    ("a glacier is", "frozen"),
    ("a dog says", "arf"),
    ("a rose is", "velvety"),
    ("a mountain is", "enormous"),
];

pub const MOVES: &[&str] = &["rock", "paper", "scissors"];

/// Text generator seeded once; every call advances the same stream.
pub struct CorpusGen {
    rng: ChaCha8Rng,
}

impl CorpusGen {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn pick<'a>(&mut self, xs: &'a [&'a str]) -> &'a str {
        xs.choose(&mut self.rng).expect("non-empty bank")
    }

    /// One line of small talk, newline-terminated.
    pub fn small_talk(&mut self) -> String {
        let speaker = self.pick(&["A", "B"]);
        match self.rng.random_range(0..6) {
            0 => format!("{speaker}: hi {}, how are you?\n", self.pick(NAMES)),
            1 => format!("{speaker}: i am {}, thanks.\n", self.pick(FEELINGS)),
            2 => format!("{speaker}: today i went to {}.\n", self.pick(PLACES)),
            3 => format!("{speaker}: then i {}.\n", self.pick(ACTIVITIES)),
            4 => format!(
                "{speaker}: {} and i {} at {}.\n",
                self.pick(NAMES),
                self.pick(ACTIVITIES),
                self.pick(PLACES)
            ),
            _ => format!("{speaker}: that sounds {}.\n", self.pick(FEELINGS)),
        }
    }

    pub fn commonsense_line(&mut self) -> String {
        let (stem, answer) = *COMMONSENSE.choose(&mut self.rng).expect("non-empty");
        format!("question: {stem} {answer}.\n")
    }

    /// A random code of uppercase letters, optionally forced to start with
    /// `first`.
    pub fn fact_code(&mut self, first: Option<u8>) -> String {
        let len = self.rng.random_range(CODE_LEN);
        let mut code: String = (0..len)
            .map(|_| *FACT_LETTERS.choose(&mut self.rng).expect("non-empty") as char)
            .collect();
        if let Some(f) = first {
            code.replace_range(..1, &(f as char).to_string());
        }
        code
    }

    pub fn grocery_list(&mut self, n: usize) -> Vec<&'static str> {
        let mut items: Vec<&str> = ITEMS.to_vec();
        items.shuffle(&mut self.rng);
        items.truncate(n);
        items
    }

    /// A statement line that never contains `=`, used as filler between a
    /// fact and its recall.
    pub fn filler_line(&mut self) -> String {
        if self.rng.random_bool(0.7) {
            self.small_talk()
        } else {
            self.commonsense_line()
        }
    }

    /// One or two key/value facts stated, a few filler lines, then one of
    /// them recalled; or the same with a shopping list.
    pub fn fact_passage(&mut self) -> String {
        let mut out = String::new();
        let gap = self.rng.random_range(0..3);
        if self.rng.random_bool(0.6) {
            let n = if self.rng.random_bool(0.75) { 1 } else { 2 };
            let mut keys: Vec<&str> = FACT_KEYS.to_vec();
            keys.shuffle(&mut self.rng);
            let facts: Vec<(&str, String)> = keys[..n]
                .iter()
                .map(|&k| (k, self.fact_code(None)))
                .collect();
            for (key, value) in &facts {
                out.push_str(&format!("A: {key}={value}.\n"));
            }
            for _ in 0..gap {
                out.push_str(&self.filler_line());
            }
            let (key, value) = facts.choose(&mut self.rng).expect("non-empty");
            out.push_str(&format!("A: so {key}={value}\n"));
        } else {
            let n = self.rng.random_range(2..4);
            let list = self.grocery_list(n).join(" ");
            out.push_str(&format!("A: buy={list}.\n"));
            for _ in 0..gap {
                out.push_str(&self.commonsense_line());
            }
            out.push_str(&format!("A: so buy={list}\n"));
        }
        out
    }

    /// A random letter string said once and echoed back by the other
    /// speaker. Pure copying, so it carries no learnable content of its own.
    pub fn echo_line(&mut self) -> String {
        let len = self.rng.random_range(3..9);
        let word: String = (0..len)
            .map(|_| {
                let c = *FACT_LETTERS.choose(&mut self.rng).expect("non-empty");
                if self.rng.random_bool(0.5) { c.to_ascii_lowercase() as char } else { c as char }
            })
            .collect();
        format!("A: echo {word}.\nB: {word}.\n")
    }

    pub fn rps_line(&mut self) -> String {
        let me = self.pick(MOVES);
        let you = self.pick(MOVES);
        let outcome = super::rps::Move::parse(you)
            .expect("valid move")
            .against(super::rps::Move::parse(me).expect("valid move"));
        format!(
            "my move: {you}\nYou played {you}, I played {me}, you {}.\n",
            outcome.verb()
        )
    }

    /// Roughly `target_bytes` of mixed passages.
    pub fn corpus(&mut self, target_bytes: usize) -> String {
        let mut out = String::with_capacity(target_bytes + 256);
        while out.len() < target_bytes {
            let line = match self.rng.random_range(0..10) {
                0 => self.small_talk(),
                1 => self.commonsense_line(),
                2..=6 => self.fact_passage(),
                7..=8 => self.echo_line(),
                _ => self.rps_line(),
            };
            out.push_str(&line);
        }
        out
    }
}

/// The bundled training corpus: 100 KB from seed 0.
pub fn default_corpus() -> String {
    CorpusGen::new(0).corpus(100_000)
}
