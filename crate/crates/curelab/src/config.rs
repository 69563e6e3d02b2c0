//! Flat run configuration: one human-editable TOML file.
//!
//! Keys mirror the training-table row names where one exists
//! (`clip_ratio_low`, `warmup_steps`, `max_gen_batches`, ...). Unknown keys
//! are rejected. Cross-field constraints are re-validated after load, and
//! every violation names the offending key and bound.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::branching::BranchConfig;
use crate::env::{RewardConfig, Vocab};
use crate::error::{Error, Result};
use crate::metrics::EvalConfig;
use crate::policy::{ModelDims, SamplerConfig};
use crate::trainer::{LossAgg, Mode, TrainConfig, TrainSetup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // run identity
    pub seed: u64,
    pub out_dir: String,
    pub run_label: String,
    /// Parallel worker count. Changes wall time only, never results.
    pub workers: usize,

    // task generator
    pub filler_tokens: usize,
    /// Chain length L: L digits, L-1 operators.
    pub difficulty: usize,

    // model
    pub embed_dim: usize,
    pub context_window: usize,
    pub hidden_dim: usize,

    // training-time sampler
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,

    // reward shaping
    pub overlong_enabled: bool,
    pub overlong_buffer_len: usize,
    pub overlong_penalty_factor: f64,
    pub max_response_len: usize,

    // branching
    pub initial_rollouts_n1: usize,
    pub reprompt_rollouts_n2: usize,
    pub top_k_entropy: usize,

    // trainer
    pub clip_ratio_low: f64,
    pub clip_ratio_high: f64,
    pub kl_coeff: f64,
    pub loss_agg_mode: LossAgg,
    pub train_groups_per_batch: usize,
    pub minibatches_per_batch: usize,
    pub gen_groups_per_round: usize,
    pub max_gen_batches: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    pub checkpoint_interval: u64,
    /// Stage-2 (and any resumed run) starts with fresh Adam moments unless
    /// this is false and the checkpoint carries optimizer state.
    pub stage2_fresh_optimizer: bool,
    /// Restart metric step numbering at 0 when resuming.
    pub resume_reset_step: bool,

    // evaluation
    pub eval_k: usize,
    pub eval_temperature: f64,
    pub eval_top_p: f64,
    pub eval_task_count: usize,
    pub eval_max_new_tokens: usize,
    pub eval_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: "runs/out".into(),
            run_label: "run".into(),
            workers: 1,
            filler_tokens: 8,
            difficulty: 3,
            embed_dim: 16,
            context_window: 12,
            hidden_dim: 32,
            temperature: 1.0,
            top_p: 1.0,
            max_new_tokens: 32,
            overlong_enabled: false,
            overlong_buffer_len: 8,
            overlong_penalty_factor: 1.0,
            max_response_len: 32,
            initial_rollouts_n1: 4,
            reprompt_rollouts_n2: 3,
            top_k_entropy: 4,
            clip_ratio_low: 0.2,
            clip_ratio_high: 0.28,
            kl_coeff: 0.0,
            loss_agg_mode: LossAgg::TokenMean,
            train_groups_per_batch: 16,
            minibatches_per_batch: 4,
            gen_groups_per_round: 16,
            max_gen_batches: 10,
            lr: 1e-2,
            warmup_steps: 10,
            weight_decay: 0.1,
            grad_clip: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            stage1_steps: 200,
            stage2_steps: 100,
            checkpoint_interval: 0,
            stage2_fresh_optimizer: true,
            resume_reset_step: false,
            eval_k: 16,
            eval_temperature: 0.6,
            eval_top_p: 0.7,
            eval_task_count: 200,
            eval_max_new_tokens: 32,
            eval_seed: 777,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Re-validate every cross-field constraint of the member configs.
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.difficulty == 0 {
            return Err(Error::Config("difficulty must be >= 1".into()));
        }
        self.vocab()?;
        self.dims().validate()?;
        self.sampler().validate()?;
        self.reward_config().validate()?;
        self.branch(Mode::CureS1).validate()?;
        self.train(Mode::CureS1).validate()?;
        self.train(Mode::Grpo).validate()?;
        self.eval_config().validate()?;
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(self.filler_tokens)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab: 16 + self.filler_tokens,
            embed: self.embed_dim,
            context: self.context_window,
            hidden: self.hidden_dim,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            temperature: self.temperature,
            top_p: self.top_p,
            max_new_tokens: self.max_new_tokens,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            max_response_len: self.max_response_len,
            overlong_buffer_len: self.overlong_buffer_len,
            overlong_penalty_factor: self.overlong_penalty_factor,
            overlong_enabled: self.overlong_enabled,
        }
    }

    /// Rollout split per mode. Only stage-1 branches; every other mode
    /// samples the full group size as initial rollouts so the group size
    /// `n1 * (1 + n2)` is identical across modes.
    pub fn branch(&self, mode: Mode) -> BranchConfig {
        let group_size = self.initial_rollouts_n1 * (1 + self.reprompt_rollouts_n2);
        if mode.branching_enabled() {
            BranchConfig {
                n1: self.initial_rollouts_n1,
                n2: self.reprompt_rollouts_n2,
                top_k: self.top_k_entropy,
            }
        } else {
            BranchConfig {
                n1: group_size,
                n2: 0,
                top_k: self.top_k_entropy,
            }
        }
    }

    /// Mode-resolved trainer config. GRPO clips symmetrically at
    /// `clip_ratio_low` and always aggregates per sequence; the other modes
    /// use the asymmetric clip-higher bounds and `loss_agg_mode`.
    pub fn train(&self, mode: Mode) -> TrainConfig {
        let (eps_low, eps_high, loss_agg) = match mode {
            Mode::Grpo => (
                self.clip_ratio_low,
                self.clip_ratio_low,
                LossAgg::SequenceMean,
            ),
            _ => (
                self.clip_ratio_low,
                self.clip_ratio_high,
                self.loss_agg_mode,
            ),
        };
        TrainConfig {
            mode,
            eps_low,
            eps_high,
            beta_kl: self.kl_coeff,
            loss_agg,
            groups_per_batch: self.train_groups_per_batch,
            minibatches_per_batch: self.minibatches_per_batch,
            groups_per_round: self.gen_groups_per_round,
            max_gen_batches: self.max_gen_batches,
            learning_rate: self.lr,
            warmup_steps: self.warmup_steps,
            weight_decay: self.weight_decay,
            grad_clip_norm: self.grad_clip,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            stage1_steps: self.stage1_steps,
            stage2_steps: self.stage2_steps,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k: self.eval_k,
            temperature: self.eval_temperature,
            top_p: self.eval_top_p,
            task_count: self.eval_task_count,
            difficulty: self.difficulty,
            seed: self.eval_seed,
            max_new_tokens: self.eval_max_new_tokens,
        }
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn train_setup(&self, mode: Mode) -> Result<TrainSetup> {
        self.validate()?;
        Ok(TrainSetup {
            vocab: self.vocab()?,
            dims: self.dims(),
            sampler: self.sampler(),
            reward: self.reward_config(),
            branch: self.branch(mode),
            train: self.train(mode),
            difficulty: self.difficulty,
            seed: self.seed,
            label: self.run_label.clone(),
            workers: self.workers,
            checkpoint_interval: self.checkpoint_interval,
            resume_fresh_optimizer: self.stage2_fresh_optimizer,
            resume_reset_step: self.resume_reset_step,
            config_echo: self.echo(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.branch(Mode::CureS1).group_size(), 16);
        assert_eq!(cfg.branch(Mode::Dapo).group_size(), 16);
        assert_eq!(cfg.branch(Mode::Dapo).n2, 0);
        assert_eq!(cfg.branch(Mode::CureS2).n1, 16);
    }

    #[test]
    fn grpo_resolution_is_symmetric_sequence_mean() {
        let cfg = RunConfig::default();
        let t = cfg.train(Mode::Grpo);
        assert_eq!(t.eps_low, 0.2);
        assert_eq!(t.eps_high, 0.2);
        assert_eq!(t.loss_agg, LossAgg::SequenceMean);
        let t = cfg.train(Mode::CureS1);
        assert_eq!(t.eps_high, 0.28);
        assert_eq!(t.loss_agg, LossAgg::TokenMean);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\ndifficulty = 2\nlr = 5e-4\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.difficulty, 2);
        assert_eq!(cfg.lr, 5e-4);
        assert_eq!(cfg.stage1_steps, 200);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("sead = 7\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sead"), "{msg}");
    }

    #[test]
    fn kebab_case_enums_parse() {
        let cfg = RunConfig::from_toml_str("loss_agg_mode = \"sequence-mean\"\n").unwrap();
        assert_eq!(cfg.loss_agg_mode, LossAgg::SequenceMean);
        assert!(RunConfig::from_toml_str("loss_agg_mode = \"tokens\"\n").is_err());
    }

    #[test]
    fn validation_names_violated_bound() {
        let cfg = RunConfig {
            clip_ratio_high: 1.5,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(
            msg.contains("clip_ratio_high") && msg.contains("1.5"),
            "{msg}"
        );

        let cfg = RunConfig {
            minibatches_per_batch: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());

        let cfg = RunConfig {
            overlong_buffer_len: 40,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn echo_roundtrips_through_json() {
        let cfg = RunConfig::default();
        let echo = cfg.echo();
        let back: RunConfig = serde_json::from_value(echo).unwrap();
        assert_eq!(back, cfg);
    }
}
