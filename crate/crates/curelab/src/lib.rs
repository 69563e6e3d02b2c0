//! curelab: a desk-scale laboratory for entropy-preserving reinforcement
//! learning with verifiable rewards.
//!
//! A tiny autoregressive policy learns mod-10 arithmetic chains scored by a
//! binary verifier. The lab implements four training modes on top of the
//! same group-relative machinery:
//!
//! * `grpo` — sequence-mean clipped surrogate with optional exact-KL
//!   penalty, no batch filter;
//! * `dapo` — token-mean surrogate with clip-higher bounds, dynamic
//!   sampling (all-correct / all-incorrect groups discarded), binary
//!   rewards with optional overlong shaping;
//! * `cure-s1` — DAPO plus critical-token branching: each initial rollout
//!   is forked at one of its top-K highest-entropy positions, the tokens
//!   before the fork are re-concatenated onto the query as a refined
//!   prompt, and regenerated continuations join the group (injected prefix
//!   tokens carry no loss terms);
//! * `cure-s2` — continue training from a stage-1 checkpoint with static
//!   initial-state sampling to consolidate exploration into accuracy.
//!
//! Everything is seeded and deterministic: identical config + seed give
//! bit-identical metrics streams at any worker count.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --release --example generate_tasks      # task generator + verifier
//! cargo run --release --example sample_rollouts     # sampling, entropies, top-p
//! cargo run --release --example branch_groups       # critical-token forks
//! cargo run --release --example gradient_check      # finite-difference audit
//! cargo run --release --example train_dapo_quick    # short training run
//! cargo run --release --example two_stage_pipeline  # cure-s1 -> cure-s2 -> eval
//! cargo run --release --example evaluate_and_sweep  # avg@k + temperature sweep
//! ```
//!
//! The `curelab` binary wires the same library into five subcommands:
//! `gen-data`, `train`, `eval`, `gradcheck`, `inspect`.

pub mod branching;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod parallel;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use branching::{build_group, BranchConfig, Group};
pub use config::RunConfig;
pub use env::{generate_task, verify, TaskInstance, TokenId, Vocab};
pub use error::{Error, Result};
pub use metrics::{avg_at_k, EvalConfig, StepMetrics};
pub use policy::{sample_rollouts, Checkpoint, ModelDims, PolicyParams, SamplerConfig, Trajectory};
pub use rng::SeedPath;
pub use trainer::{run_training, Mode, TrainConfig, TrainSetup};
