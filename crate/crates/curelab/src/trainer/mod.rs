//! Turning groups into parameter updates: dynamic-sampling batch fill,
//! group-relative advantages, clipped surrogate objectives with prefix
//! masking, AdamW, and the training loop for all four modes.

mod objective;
mod optim;
mod run;

pub use objective::{
    cure_objective_and_gradient, grpo_objective_and_gradient, token_ratios, ObjectiveOutcome,
};
pub use optim::{effective_lr, AdamW, StepInfo};
pub use run::{fill_batch, fill_batch_with, run_training, FillStats, TrainReport, TrainSetup};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::branching::Group;
use crate::env::TokenId;
use crate::error::{Error, Result};
use crate::policy::{Origin, Trajectory};

/// Training algorithm variant.
///
/// `Dapo` is structurally `CureS1` with branching disabled (16 initial
/// rollouts, no re-prompting); `CureS2` continues from a stage-1 checkpoint
/// with static initial-state sampling; `Grpo` disables the batch filter and
/// optimizes the sequence-mean objective with an optional exact-KL penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Grpo,
    Dapo,
    CureS1,
    CureS2,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Grpo => "grpo",
            Mode::Dapo => "dapo",
            Mode::CureS1 => "cure-s1",
            Mode::CureS2 => "cure-s2",
        }
    }

    /// Whether all-correct / all-incorrect groups are discarded before
    /// batching. Off only for the GRPO baseline.
    pub fn uses_filter(&self) -> bool {
        !matches!(self, Mode::Grpo)
    }

    /// Whether rollout groups include re-prompted branches.
    pub fn branching_enabled(&self) -> bool {
        matches!(self, Mode::CureS1)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Mode::Grpo),
            "dapo" => Ok(Mode::Dapo),
            "cure-s1" => Ok(Mode::CureS1),
            "cure-s2" => Ok(Mode::CureS2),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected grpo | dapo | cure-s1 | cure-s2)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Loss aggregation: one token-mean over the whole group set, or per-sequence
/// means averaged across trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossAgg {
    TokenMean,
    SequenceMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Lower clip bound (ratio floor is 1 - eps_low).
    pub eps_low: f64,
    /// Upper clip bound (ratio ceiling is 1 + eps_high); clip-higher keeps
    /// this above eps_low so low-probability tokens can grow.
    pub eps_high: f64,
    /// Exact-KL penalty coefficient; only the GRPO objective consumes it.
    pub beta_kl: f64,
    pub loss_agg: LossAgg,
    /// Groups per training batch (B).
    pub groups_per_batch: usize,
    /// Optimizer steps per generation phase; must divide groups_per_batch.
    pub minibatches_per_batch: usize,
    /// Groups built per generation round while filling a batch.
    pub groups_per_round: usize,
    /// Generation rounds allowed per batch before aborting.
    pub max_gen_batches: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub stage1_steps: u64,
    pub stage2_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Dapo,
            eps_low: 0.2,
            eps_high: 0.28,
            beta_kl: 0.0,
            loss_agg: LossAgg::TokenMean,
            groups_per_batch: 16,
            minibatches_per_batch: 4,
            groups_per_round: 16,
            max_gen_batches: 10,
            learning_rate: 1e-2,
            warmup_steps: 10,
            weight_decay: 0.1,
            grad_clip_norm: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            stage1_steps: 200,
            stage2_steps: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let floats = [
            ("clip_ratio_low", self.eps_low),
            ("clip_ratio_high", self.eps_high),
            ("kl_coeff", self.beta_kl),
            ("lr", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip_norm),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (name, v) in floats {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if self.eps_low <= 0.0 {
            return Err(Error::Config(format!(
                "clip_ratio_low must be > 0, got {}",
                self.eps_low
            )));
        }
        if self.eps_high < self.eps_low {
            return Err(Error::Config(format!(
                "clip_ratio_high ({}) must be >= clip_ratio_low ({})",
                self.eps_high, self.eps_low
            )));
        }
        if self.eps_high >= 1.0 {
            return Err(Error::Config(format!(
                "clip_ratio_high must be < 1, got {}",
                self.eps_high
            )));
        }
        if self.beta_kl < 0.0 {
            return Err(Error::Config(format!(
                "kl_coeff must be >= 0, got {}",
                self.beta_kl
            )));
        }
        if self.groups_per_batch == 0 {
            return Err(Error::Config("train_groups_per_batch must be >= 1".into()));
        }
        if self.minibatches_per_batch == 0
            || !self
                .groups_per_batch
                .is_multiple_of(self.minibatches_per_batch)
        {
            return Err(Error::Config(format!(
                "minibatches_per_batch ({}) must divide train_groups_per_batch ({})",
                self.minibatches_per_batch, self.groups_per_batch
            )));
        }
        if self.groups_per_round == 0 {
            return Err(Error::Config("gen_groups_per_round must be >= 1".into()));
        }
        if self.max_gen_batches == 0 {
            return Err(Error::Config("max_gen_batches must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "lr must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.grad_clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "grad_clip must be > 0, got {}",
                self.grad_clip_norm
            )));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.adam_epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "adam_epsilon must be > 0, got {}",
                self.adam_epsilon
            )));
        }
        if self.stage1_steps == 0 || self.stage2_steps == 0 {
            return Err(Error::Config(
                "stage1_steps and stage2_steps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Dynamic-sampling filter: keep a group only when its rollouts mix
/// verified and unverified outcomes. All-correct and all-incorrect groups
/// carry no group-relative signal.
pub fn filter_group(group: &Group) -> bool {
    let verified = group.verified_count();
    verified > 0 && verified < group.len()
}

/// Standardize returns within a group by the population standard deviation
/// (divide by n, no epsilon). Errors on constant rewards; kept groups with
/// binary rewards cannot trigger that.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!(
            "group must hold at least 2 rewards to standardize, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::ZeroRewardStd {
            group_size: rewards.len(),
        });
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Lenient variant for unfiltered (GRPO) batches: a constant-reward group
/// yields all-zero advantages and therefore no gradient signal.
pub fn group_advantages_or_zero(rewards: &[f64]) -> Vec<f64> {
    match group_advantages(rewards) {
        Ok(a) => a,
        Err(_) => vec![0.0; rewards.len()],
    }
}

/// Pessimistic clipped surrogate term:
/// `min(ratio * A, clip(ratio, 1 - eps_low, 1 + eps_high) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high) * advantage;
    (ratio * advantage).min(clipped)
}

/// One trajectory flattened for the loss. Branch continuations keep their
/// refined prompt as prompt, so injected prefix tokens never appear as
/// response tokens and contribute no loss terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossItem {
    pub prompt: Vec<TokenId>,
    pub tokens: Vec<TokenId>,
    pub logprobs_old: Vec<f64>,
    pub advantage: f64,
    pub is_branch: bool,
}

impl LossItem {
    fn from_trajectory(traj: &Trajectory, advantage: f64) -> Self {
        LossItem {
            prompt: traj.prompt.clone(),
            tokens: traj.tokens.clone(),
            logprobs_old: traj.logprobs_old.clone(),
            advantage,
            is_branch: matches!(traj.origin, Origin::Branch { .. }),
        }
    }
}

/// A group set ready for the objective, with per-trajectory advantages
/// already broadcast.
#[derive(Debug, Clone, Default)]
pub struct LossBatch {
    pub items: Vec<LossItem>,
}

impl LossBatch {
    /// Total response-token count: the token-mean denominator. Equals the
    /// number of per-token loss terms by construction.
    pub fn token_count(&self) -> usize {
        self.items.iter().map(|item| item.tokens.len()).sum()
    }

    /// Flatten groups, standardizing each group's (possibly shaped) rewards.
    /// `strict` groups must have nonconstant rewards; the lenient path
    /// assigns zero advantages to constant groups instead.
    pub fn from_groups(groups: &[Group], strict: bool) -> Result<Self> {
        let mut items = Vec::new();
        for group in groups {
            let rewards = group.rewards();
            let advantages = if strict {
                group_advantages(&rewards)?
            } else {
                group_advantages_or_zero(&rewards)
            };
            for (traj, adv) in group.all_trajectories().zip(advantages) {
                items.push(LossItem::from_trajectory(traj, adv));
            }
        }
        Ok(LossBatch { items })
    }

    /// Build directly from trajectories with caller-supplied advantages.
    pub fn from_trajectories<F>(trajs: &[Trajectory], advantage: F) -> Self
    where
        F: Fn(&Trajectory) -> f64,
    {
        LossBatch {
            items: trajs
                .iter()
                .map(|t| LossItem::from_trajectory(t, advantage(t)))
                .collect(),
        }
    }
}
