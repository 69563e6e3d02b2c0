//! Synthetic verifiable arithmetic tasks and the binary reward signal.
//!
//! A task is a left-to-right chain of single digits joined by `+` or `*`,
//! reduced mod 10 after every step, terminated by `= ?`. The verifier reads
//! the last digit token a response emits before its first end-of-sequence
//! token and compares it to the ground truth. Rewards are binary, with an
//! optional soft overlong penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedPath;

pub type TokenId = u32;

/// Number of reserved (non-filler) ids: PAD, EOS, ten digits, `+`, `*`, `=`, `?`.
const RESERVED: usize = 16;
const MIN_VOCAB: usize = 16;
const MAX_VOCAB: usize = 64;

/// Token inventory for the toy arithmetic language.
///
/// Layout is fixed: PAD=0, EOS=1, digits 0-9 at 2..=11, `+`=12, `*`=13,
/// `=`=14, `?`=15, then `filler_count` free "work" tokens the policy may
/// emit without changing the verified answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    filler_count: usize,
}

impl Vocab {
    pub const PAD: TokenId = 0;
    pub const EOS: TokenId = 1;
    pub const PLUS: TokenId = 12;
    pub const STAR: TokenId = 13;
    pub const EQUALS: TokenId = 14;
    pub const QUESTION: TokenId = 15;

    pub fn new(filler_count: usize) -> Result<Self> {
        let size = RESERVED + filler_count;
        if !(MIN_VOCAB..=MAX_VOCAB).contains(&size) {
            return Err(Error::Config(format!(
                "vocab size must be in [{MIN_VOCAB}, {MAX_VOCAB}], got {size} \
                 ({filler_count} filler tokens)"
            )));
        }
        Ok(Vocab { filler_count })
    }

    pub fn size(&self) -> usize {
        RESERVED + self.filler_count
    }

    pub fn filler_count(&self) -> usize {
        self.filler_count
    }

    /// Token id of digit `d` (0-9).
    pub fn digit(&self, d: u8) -> TokenId {
        debug_assert!(d < 10);
        2 + d as TokenId
    }

    /// Digit value of a token, if it is a digit token.
    pub fn digit_value(&self, t: TokenId) -> Option<u8> {
        if (2..12).contains(&t) {
            Some((t - 2) as u8)
        } else {
            None
        }
    }

    /// The i-th filler "work" token.
    pub fn filler(&self, i: usize) -> TokenId {
        debug_assert!(i < self.filler_count);
        (RESERVED + i) as TokenId
    }

    /// Single-character rendering of a token id.
    pub fn glyph(&self, t: TokenId) -> char {
        match t {
            Self::PAD => '.',
            Self::EOS => '$',
            Self::PLUS => '+',
            Self::STAR => '*',
            Self::EQUALS => '=',
            Self::QUESTION => '?',
            _ => {
                if let Some(d) = self.digit_value(t) {
                    (b'0' + d) as char
                } else {
                    let i = t as usize - RESERVED;
                    if i < 26 {
                        (b'a' + i as u8) as char
                    } else {
                        (b'A' + (i - 26) as u8) as char
                    }
                }
            }
        }
    }

    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&t| self.glyph(t)).collect()
    }

    /// Human-readable id -> glyph mapping, one line per token.
    pub fn mapping_table(&self) -> String {
        let mut out = String::new();
        for t in 0..self.size() as TokenId {
            let name = match t {
                Self::PAD => "PAD",
                Self::EOS => "EOS",
                Self::PLUS => "plus",
                Self::STAR => "star",
                Self::EQUALS => "equals",
                Self::QUESTION => "question",
                _ if self.digit_value(t).is_some() => "digit",
                _ => "filler",
            };
            out.push_str(&format!("{t}\t{}\t{name}\n", self.glyph(t)));
        }
        out
    }
}

/// Chain operators. Evaluation is strictly left to right, reducing mod 10
/// after every step; there is no operator precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainOp {
    Add,
    Mul,
}

impl ChainOp {
    fn token(self) -> TokenId {
        match self {
            ChainOp::Add => Vocab::PLUS,
            ChainOp::Mul => Vocab::STAR,
        }
    }

    fn apply(self, acc: u8, d: u8) -> u8 {
        match self {
            ChainOp::Add => (acc + d) % 10,
            ChainOp::Mul => (acc * d) % 10,
        }
    }
}

/// Left-to-right chain value with every intermediate reduced mod 10.
pub fn eval_chain(digits: &[u8], ops: &[ChainOp]) -> u8 {
    debug_assert_eq!(ops.len() + 1, digits.len());
    let mut acc = digits[0] % 10;
    for (op, &d) in ops.iter().zip(&digits[1..]) {
        acc = op.apply(acc, d);
    }
    acc
}

/// One verifiable query: a prompt, its ground-truth answer, and the RNG
/// coordinates that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub prompt: Vec<TokenId>,
    pub answer: u8,
    pub difficulty: usize,
    pub seed_path: SeedPath,
}

/// Deterministically generate a task from RNG coordinates.
///
/// The prompt holds `difficulty` digits and `difficulty - 1` operators,
/// followed by `= ?`. Operands are uniform over digits, operators uniform
/// over `{+, *}`.
pub fn generate_task(vocab: &Vocab, seed_path: SeedPath, difficulty: usize) -> TaskInstance {
    assert!(difficulty >= 1, "difficulty must be >= 1");
    let mut rng = seed_path.rng();
    let mut digits = Vec::with_capacity(difficulty);
    let mut ops = Vec::with_capacity(difficulty.saturating_sub(1));
    for i in 0..difficulty {
        digits.push(rng.uniform_index(10) as u8);
        if i + 1 < difficulty {
            ops.push(if rng.uniform_index(2) == 0 {
                ChainOp::Add
            } else {
                ChainOp::Mul
            });
        }
    }
    let mut prompt = Vec::with_capacity(2 * difficulty + 1);
    for (i, &d) in digits.iter().enumerate() {
        prompt.push(vocab.digit(d));
        if i < ops.len() {
            prompt.push(ops[i].token());
        }
    }
    prompt.push(Vocab::EQUALS);
    prompt.push(Vocab::QUESTION);
    TaskInstance {
        prompt,
        answer: eval_chain(&digits, &ops),
        difficulty,
        seed_path,
    }
}

/// Seeded stream of fresh tasks; the counter is the only state.
#[derive(Debug, Clone)]
pub struct TaskStream {
    path: SeedPath,
    counter: u64,
    difficulty: usize,
}

impl TaskStream {
    pub fn new(path: SeedPath, difficulty: usize) -> Self {
        TaskStream {
            path,
            counter: 0,
            difficulty,
        }
    }

    pub fn with_counter(path: SeedPath, difficulty: usize, counter: u64) -> Self {
        TaskStream {
            path,
            counter,
            difficulty,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_task(&mut self, vocab: &Vocab) -> TaskInstance {
        let t = generate_task(vocab, self.path.child(self.counter), self.difficulty);
        self.counter += 1;
        t
    }
}

/// True iff the last digit token before the first EOS (or before the end of
/// the response when no EOS is present) equals the ground truth. A response
/// with no digit token is never correct.
pub fn verify(vocab: &Vocab, gt: u8, response: &[TokenId]) -> bool {
    let upto = response
        .iter()
        .position(|&t| t == Vocab::EOS)
        .unwrap_or(response.len());
    response[..upto]
        .iter()
        .rev()
        .find_map(|&t| vocab.digit_value(t))
        == Some(gt)
}

/// Reward shaping knobs. With `overlong_enabled = false` rewards are
/// exactly binary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub max_response_len: usize,
    pub overlong_buffer_len: usize,
    pub overlong_penalty_factor: f64,
    pub overlong_enabled: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            max_response_len: 32,
            overlong_buffer_len: 8,
            overlong_penalty_factor: 1.0,
            overlong_enabled: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.overlong_buffer_len >= self.max_response_len {
            return Err(Error::Config(format!(
                "overlong_buffer_len ({}) must be < max_response_len ({})",
                self.overlong_buffer_len, self.max_response_len
            )));
        }
        if self.overlong_penalty_factor < 0.0 {
            return Err(Error::Config(format!(
                "overlong_penalty_factor must be >= 0, got {}",
                self.overlong_penalty_factor
            )));
        }
        Ok(())
    }
}

/// Scalar reward for one response.
///
/// Base reward is 1.0 when verified, else 0.0. When overlong shaping is
/// enabled, a piecewise-linear penalty ramps from 0 at
/// `max_response_len - overlong_buffer_len` generated tokens up to the full
/// penalty factor at the cap; a response truncated at the cap without EOS
/// takes the full penalty.
pub fn reward(verified: bool, generated_len: usize, truncated: bool, cfg: &RewardConfig) -> f64 {
    let base = if verified { 1.0 } else { 0.0 };
    if !cfg.overlong_enabled {
        return base;
    }
    let f = cfg.overlong_penalty_factor;
    let penalty = if truncated {
        f
    } else {
        let free = cfg.max_response_len - cfg.overlong_buffer_len;
        let over = generated_len.saturating_sub(free) as f64;
        (f * over / cfg.overlong_buffer_len as f64).min(f)
    };
    base - penalty
}
