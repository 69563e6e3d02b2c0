//! The training loop: snapshot the policy, fill a batch of kept groups,
//! split into minibatches, update, emit one metrics record per optimizer
//! step, and checkpoint.

use std::path::{Path, PathBuf};

use crate::branching::{build_group, BranchConfig, Group};
use crate::env::{RewardConfig, TaskStream, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{run_header, JsonlWriter, StepMetrics};
use crate::parallel::parallel_map;
use crate::policy::{Checkpoint, ModelDims, PolicyParams, SamplerConfig};
use crate::rng::SeedPath;

use super::{
    cure_objective_and_gradient, filter_group, grpo_objective_and_gradient, AdamW, LossBatch, Mode,
    TrainConfig,
};

// Run-level RNG stream tags under the root seed.
const STREAM_INIT: u64 = 0;
const STREAM_TASKS: u64 = 1;
const STREAM_GEN: u64 = 2;

/// Counters for one batch-fill phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FillStats {
    /// Groups that survived the filter (including any overflow beyond the
    /// batch size, which is dropped when the buffer is cut to B).
    pub kept: usize,
    /// Groups discarded as all-correct or all-incorrect.
    pub discarded: usize,
    /// Generation rounds consumed.
    pub rounds: usize,
}

/// Buffer loop shared by the real batch filler and tests: call
/// `build_round` until the buffer holds `needed` kept groups, return
/// exactly the first `needed`, and drop the rest (the buffer never carries
/// across calls). Errors out after `max_rounds` rounds.
pub fn fill_batch_with<F>(
    mut build_round: F,
    needed: usize,
    max_rounds: usize,
    filter: bool,
) -> Result<(Vec<Group>, FillStats)>
where
    F: FnMut(usize) -> Result<Vec<Group>>,
{
    let mut buffer: Vec<Group> = Vec::new();
    let mut discarded = 0usize;
    let mut rounds = 0usize;
    while buffer.len() < needed {
        if rounds == max_rounds {
            return Err(Error::BatchExhausted {
                rounds,
                kept: buffer.len(),
                needed,
                discarded,
            });
        }
        for group in build_round(rounds)? {
            if !filter || filter_group(&group) {
                buffer.push(group);
            } else {
                discarded += 1;
            }
        }
        rounds += 1;
    }
    let kept = buffer.len();
    buffer.truncate(needed);
    Ok((
        buffer,
        FillStats {
            kept,
            discarded,
            rounds,
        },
    ))
}

/// Fill one training batch from fresh tasks against a frozen snapshot.
/// Groups within a round are built in parallel; every group is a pure
/// function of `(params_old, task, configs, phase_path, round, slot)`.
#[allow(clippy::too_many_arguments)]
pub fn fill_batch(
    stream: &mut TaskStream,
    vocab: &Vocab,
    params_old: &PolicyParams,
    branch: &BranchConfig,
    sampler: &SamplerConfig,
    reward: &RewardConfig,
    train: &TrainConfig,
    phase_path: &SeedPath,
    workers: usize,
    filter: bool,
) -> Result<(Vec<Group>, FillStats)> {
    fill_batch_with(
        |round| {
            let tasks: Vec<_> = (0..train.groups_per_round)
                .map(|_| stream.next_task(vocab))
                .collect();
            parallel_map(tasks.len(), workers, |slot| {
                build_group(
                    params_old,
                    &tasks[slot],
                    vocab,
                    branch,
                    sampler,
                    reward,
                    &phase_path.child(round as u64).child(slot as u64),
                )
            })
        },
        train.groups_per_batch,
        train.max_gen_batches,
        filter,
    )
}

/// Everything a training run needs, already resolved for one mode.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub vocab: Vocab,
    pub dims: ModelDims,
    pub sampler: SamplerConfig,
    pub reward: RewardConfig,
    pub branch: BranchConfig,
    pub train: TrainConfig,
    pub difficulty: usize,
    pub seed: u64,
    pub label: String,
    pub workers: usize,
    /// Extra checkpoints every this many optimizer steps (0 = final only).
    pub checkpoint_interval: u64,
    /// Start stage-2 (or any resumed run) with fresh Adam moments.
    pub resume_fresh_optimizer: bool,
    /// Restart step numbering at 0 when resuming.
    pub resume_reset_step: bool,
    pub config_echo: serde_json::Value,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.vocab.size() != self.dims.vocab {
            return Err(Error::Config(format!(
                "vocab size {} does not match model vocab {}",
                self.vocab.size(),
                self.dims.vocab
            )));
        }
        if self.difficulty == 0 {
            return Err(Error::Config("difficulty must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.sampler.validate()?;
        self.reward.validate()?;
        self.branch.validate()?;
        self.train.validate()
    }
}

/// What a run produced. `abort` carries the diagnostic when the run stopped
/// early; the final checkpoint then holds the last good state.
#[derive(Debug)]
pub struct TrainReport {
    pub mode: Mode,
    pub start_step: u64,
    pub steps_completed: u64,
    pub abort: Option<String>,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub final_params: PolicyParams,
}

fn batch_stats(groups: &[Group]) -> (f64, f64, f64) {
    let mut reward_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut token_count = 0usize;
    let mut traj_count = 0usize;
    for group in groups {
        for traj in group.all_trajectories() {
            reward_sum += traj.reward;
            entropy_sum += traj.entropies.iter().sum::<f64>();
            token_count += traj.len();
            traj_count += 1;
        }
    }
    let mean_reward = reward_sum / traj_count.max(1) as f64;
    let mean_entropy = entropy_sum / token_count.max(1) as f64;
    let mean_resp_len = token_count as f64 / traj_count.max(1) as f64;
    (mean_reward, mean_entropy, mean_resp_len)
}

/// Run one training mode to its step budget (`stage1_steps`, or
/// `stage2_steps` for a stage-2 run), writing `metrics.jsonl` and
/// checkpoints under `out_dir`.
///
/// Per generation phase: snapshot the policy, fill a batch, compute
/// group-relative advantages, then take `minibatches_per_batch` optimizer
/// steps against the frozen snapshot. Batch-fill exhaustion and non-finite
/// updates abort the run after checkpointing the last good state.
pub fn run_training(
    setup: &TrainSetup,
    resume: Option<&Checkpoint>,
    out_dir: &Path,
) -> Result<TrainReport> {
    setup.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mode = setup.train.mode;
    let root = SeedPath::root(setup.seed);

    let mut params = match resume {
        Some(ckpt) => {
            ckpt.validate()?;
            if ckpt.params.dims != setup.dims {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint dims {:?} do not match configured dims {:?}",
                    ckpt.params.dims, setup.dims
                )));
            }
            ckpt.params.clone()
        }
        None => PolicyParams::init(setup.dims, &root.child(STREAM_INIT)),
    };
    // frozen reference for the optional GRPO KL term
    let params_ref = params.clone();
    let mut opt = match resume {
        Some(ckpt) if !setup.resume_fresh_optimizer && ckpt.optimizer.is_some() => {
            AdamW::from_state(ckpt.optimizer.clone().expect("checked above"))
        }
        _ => AdamW::new(setup.dims),
    };
    let start_step = match resume {
        Some(ckpt) if !setup.resume_reset_step => ckpt.step,
        _ => 0,
    };
    let mut stream = TaskStream::with_counter(
        root.child(STREAM_TASKS),
        setup.difficulty,
        resume.map(|c| c.task_counter).unwrap_or(0),
    );

    let total = match mode {
        Mode::CureS2 => setup.train.stage2_steps,
        _ => setup.train.stage1_steps,
    };
    let end = start_step + total;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut writer = JsonlWriter::create(&metrics_path)?;
    writer.write(&run_header(
        &setup.label,
        setup.seed,
        mode.label(),
        setup.config_echo.clone(),
    ))?;

    let chunk = setup.train.groups_per_batch / setup.train.minibatches_per_batch;
    let strict = mode.uses_filter();
    let mut g = start_step;
    let mut abort: Option<String> = None;

    'phases: while g < end {
        let theta_old = params.clone();
        let phase_path = root.child(STREAM_GEN).child(g);
        let fill = fill_batch(
            &mut stream,
            &setup.vocab,
            &theta_old,
            &setup.branch,
            &setup.sampler,
            &setup.reward,
            &setup.train,
            &phase_path,
            setup.workers,
            strict,
        );
        let (groups, stats) = match fill {
            Ok(ok) => ok,
            Err(err @ Error::BatchExhausted { .. }) => {
                abort = Some(err.to_string());
                break 'phases;
            }
            Err(err) => return Err(err),
        };
        let (mean_reward, mean_entropy, mean_resp_len) = batch_stats(&groups);

        for minibatch in groups.chunks(chunk) {
            if g >= end {
                break;
            }
            let batch = LossBatch::from_groups(minibatch, strict)?;
            let outcome = match mode {
                Mode::Grpo => {
                    grpo_objective_and_gradient(&batch, &params, &params_ref, &setup.train)?
                }
                _ => cure_objective_and_gradient(&batch, &params, &setup.train)?,
            };
            if !outcome.value.is_finite() || !outcome.grad.is_finite() {
                abort = Some(format!("non-finite objective or gradient at step {g}"));
                break 'phases;
            }
            let info = match opt.step(&mut params, &outcome.grad, &setup.train, g) {
                Ok(info) => info,
                Err(Error::NonFiniteUpdate) => {
                    abort = Some(format!("non-finite optimizer update at step {g}"));
                    break 'phases;
                }
                Err(err) => return Err(err),
            };
            writer.write(&StepMetrics {
                step: g,
                stage: mode.label().into(),
                mode: mode.label().into(),
                objective: outcome.value,
                grad_norm: info.grad_norm,
                lr: info.lr,
                mean_reward,
                mean_entropy,
                mean_resp_len,
                groups_kept: stats.kept,
                groups_discarded: stats.discarded,
                gen_rounds_used: stats.rounds,
            })?;
            g += 1;
            if setup.checkpoint_interval > 0 && g % setup.checkpoint_interval == 0 && g < end {
                let ckpt = Checkpoint::new(
                    g,
                    mode.label(),
                    params.clone(),
                    Some(opt.state()),
                    stream.counter(),
                    setup.config_echo.clone(),
                );
                ckpt.save(&out_dir.join(format!("checkpoint_step{g}.json")))?;
            }
        }
    }
    writer.flush()?;

    let final_checkpoint = out_dir.join("checkpoint_final.json");
    Checkpoint::new(
        g,
        mode.label(),
        params.clone(),
        Some(opt.state()),
        stream.counter(),
        setup.config_echo.clone(),
    )
    .save(&final_checkpoint)?;

    Ok(TrainReport {
        mode,
        start_step,
        steps_completed: g - start_step,
        abort,
        metrics_path,
        final_checkpoint,
        final_params: params,
    })
}
