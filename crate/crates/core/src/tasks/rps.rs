//! Rock-paper-scissors against a biased player.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{McqOption, MultipleChoice, Session, SessionConfig, Turn};
use crate::tinylm::TinyModel;
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    Rock,
    Paper,
    Scissors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Win,
    Tie,
    Lose,
}

impl Move {
    pub const ALL: [Move; 3] = [Move::Rock, Move::Paper, Move::Scissors];

    pub fn name(self) -> &'static str {
        match self {
            Move::Rock => "rock",
            Move::Paper => "paper",
            Move::Scissors => "scissors",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// The move this one defeats.
    pub fn beats(self) -> Move {
        match self {
            Move::Rock => Move::Scissors,
            Move::Paper => Move::Rock,
            Move::Scissors => Move::Paper,
        }
    }

    /// Outcome for `self` when the opponent plays `other`.
    pub fn against(self, other: Move) -> Outcome {
        if self == other {
            Outcome::Tie
        } else if self.beats() == other {
            Outcome::Win
        } else {
            Outcome::Lose
        }
    }
}

impl Outcome {
    pub fn inverse(self) -> Outcome {
        match self {
            Outcome::Win => Outcome::Lose,
            Outcome::Tie => Outcome::Tie,
            Outcome::Lose => Outcome::Win,
        }
    }

    /// Past-tense verb for the feedback message.
    pub fn verb(self) -> &'static str {
        match self {
            Outcome::Win => "won",
            Outcome::Tie => "tied",
            Outcome::Lose => "lost",
        }
    }
}

impl std::fmt::Display for Move {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A player who draws moves independently from fixed probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerProfile {
    /// Probabilities of rock, paper, scissors.
    pub move_probs: [f64; 3],
    pub seed: u64,
}

impl PlayerProfile {
    pub fn new(move_probs: [f64; 3], seed: u64) -> Result<Self> {
        if move_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::config(format!(
                "move probabilities {move_probs:?} must be non-negative"
            )));
        }
        if (move_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "move probabilities {move_probs:?} must sum to 1"
            )));
        }
        Ok(Self { move_probs, seed })
    }

    pub fn rock_player(seed: u64) -> Self {
        Self {
            move_probs: [0.5, 0.3, 0.2],
            seed,
        }
    }

    pub fn paper_player(seed: u64) -> Self {
        Self {
            move_probs: [0.2, 0.5, 0.3],
            seed,
        }
    }

    pub fn scissors_player(seed: u64) -> Self {
        Self {
            move_probs: [0.3, 0.2, 0.5],
            seed,
        }
    }

    /// Named presets: `rock`, `paper`, `scissors`.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "rock" => Ok(Self::rock_player(seed)),
            "paper" => Ok(Self::paper_player(seed)),
            "scissors" => Ok(Self::scissors_player(seed)),
            _ => Err(Error::config(format!(
                "unknown player `{name}`; expected rock, paper or scissors"
            ))),
        }
    }

    pub fn sampler(&self) -> Result<MoveSampler> {
        Ok(MoveSampler {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            dist: WeightedIndex::new(self.move_probs).map_err(|e| Error::config(e.to_string()))?,
        })
    }
}

pub struct MoveSampler {
    rng: ChaCha8Rng,
    dist: WeightedIndex<f64>,
}

impl MoveSampler {
    pub fn sample(&mut self) -> Move {
        Move::ALL[self.dist.sample(&mut self.rng)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpsRound {
    pub player_move: Move,
    pub model_move: Move,
    /// From the model's side.
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpsReport {
    pub rounds: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub history: Vec<RpsRound>,
}

impl RpsReport {
    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.rounds as f64
    }

    pub fn tie_rate(&self) -> f64 {
        self.ties as f64 / self.rounds as f64
    }

    pub fn lose_rate(&self) -> f64 {
        self.losses as f64 / self.rounds as f64
    }
}

/// Something that picks the model's move given the prompt for the round.
pub trait RpsAgent {
    fn play(&mut self, turn: &Turn) -> Result<Move>;
}

/// Always plays the same move.
pub struct FixedAgent(pub Move);

impl RpsAgent for FixedAgent {
    fn play(&mut self, _turn: &Turn) -> Result<Move> {
        Ok(self.0)
    }
}

/// Plays by scoring the three moves as a multiple-choice question inside
/// one uninterrupted session.
pub struct ModelAgent<'m> {
    session: Session<'m>,
}

impl<'m> ModelAgent<'m> {
    pub fn new(model: &'m TinyModel, config: SessionConfig) -> Result<Self> {
        Ok(Self {
            session: Session::new(model, config)?,
        })
    }

    pub fn session(&self) -> &Session<'m> {
        &self.session
    }
}

impl RpsAgent for ModelAgent<'_> {
    fn play(&mut self, turn: &Turn) -> Result<Move> {
        let rec = self.session.run_turn(turn)?;
        let chosen = rec.mcq_choice.expect("move turns carry a question");
        Ok(Move::ALL[chosen])
    }
}

pub fn move_question() -> MultipleChoice {
    let options = Move::ALL
        .iter()
        .map(|m| McqOption {
            label: m.name().as_bytes()[0] as TokenId,
            text: Tokenizer.encode(format!("{m}\n")),
        })
        .collect();
    // no move is right in advance; scoring is by outcome
    MultipleChoice {
        options,
        answer_index: 0,
        also_correct: Vec::new(),
    }
}

/// Prompt for the next move, led by feedback on the previous round.
pub fn round_prompt(previous: Option<&RpsRound>) -> Turn {
    let mut text = String::new();
    if let Some(r) = previous {
        text.push_str(&format!(
            "You played {}, I played {}, you {}.\n",
            r.model_move,
            r.player_move,
            r.outcome.verb()
        ));
    }
    text.push_str("my move: ");
    let mut turn = Turn::question(Tokenizer.encode(text), move_question());
    turn.response_budget = 0;
    turn
}

pub fn run_rps_with(
    agent: &mut dyn RpsAgent,
    profile: &PlayerProfile,
    rounds: usize,
) -> Result<RpsReport> {
    if rounds == 0 {
        return Err(Error::config("at least one round is needed"));
    }
    let mut sampler = profile.sampler()?;
    let mut report = RpsReport {
        rounds,
        wins: 0,
        ties: 0,
        losses: 0,
        history: Vec::with_capacity(rounds),
    };
    for _ in 0..rounds {
        let turn = round_prompt(report.history.last());
        let player_move = sampler.sample();
        let model_move = agent.play(&turn)?;
        let outcome = model_move.against(player_move);
        match outcome {
            Outcome::Win => report.wins += 1,
            Outcome::Tie => report.ties += 1,
            Outcome::Lose => report.losses += 1,
        }
        report.history.push(RpsRound {
            player_move,
            model_move,
            outcome,
        });
    }
    Ok(report)
}

/// Plays `rounds` rounds in one session that is never reset.
pub fn run_rps(
    model: &TinyModel,
    profile: &PlayerProfile,
    rounds: usize,
    config: &SessionConfig,
) -> Result<RpsReport> {
    if config.reset_per_dialog {
        return Err(Error::config(
            "rock-paper-scissors runs as a single session; set reset_per_dialog = false",
        ));
    }
    let mut agent = ModelAgent::new(model, *config)?;
    run_rps_with(&mut agent, profile, rounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominance_is_total_and_antisymmetric() {
        for a in Move::ALL {
            for b in Move::ALL {
                let o = a.against(b);
                assert_eq!(b.against(a), o.inverse());
                assert_eq!(o == Outcome::Tie, a == b);
            }
        }
    }

    #[test]
    fn profile_validation() {
        assert!(PlayerProfile::new([0.5, 0.5, 0.1], 0).is_err());
        assert!(PlayerProfile::new([1.2, -0.2, 0.0], 0).is_err());
        assert!(PlayerProfile::preset("lizard", 0).is_err());
        assert_eq!(
            PlayerProfile::preset("rock", 1).unwrap().move_probs,
            [0.5, 0.3, 0.2]
        );
    }

    #[test]
    fn sampler_is_seeded() {
        let p = PlayerProfile::paper_player(5);
        let a: Vec<Move> = {
            let mut s = p.sampler().unwrap();
            (0..50).map(|_| s.sample()).collect()
        };
        let b: Vec<Move> = {
            let mut s = p.sampler().unwrap();
            (0..50).map(|_| s.sample()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn prompts_follow_the_template() {
        let r = RpsRound {
            player_move: Move::Rock,
            model_move: Move::Paper,
            outcome: Outcome::Win,
        };
        let t = round_prompt(Some(&r));
        assert_eq!(
            Tokenizer.decode(&t.user_tokens),
            b"You played paper, I played rock, you won.\nmy move: "
        );
        assert_eq!(
            round_prompt(None).user_tokens,
            Tokenizer.encode("my move: ")
        );
    }
}
