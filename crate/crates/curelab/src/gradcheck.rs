//! Finite-difference auditing of analytic gradients.
//!
//! The numeric side only ever evaluates objective *values* at perturbed
//! parameters, so it stays independent of the analytic backward path it
//! checks. Scenarios keep the behavior policy close to the snapshot so
//! importance ratios sit well inside the clip band, where the surrogate is
//! smooth; clipped-branch behavior (zero gradient) is covered separately by
//! unit tests.

use crate::error::{Error, Result};
use crate::policy::{Gradients, ModelDims, PolicyParams, SamplerConfig, Trajectory};
use crate::rng::SeedPath;
use crate::trainer::{
    cure_objective_and_gradient, grpo_objective_and_gradient, LossAgg, LossBatch, TrainConfig,
};

/// Central finite-difference gradient of `f` at `params`, one parameter at
/// a time.
pub fn finite_difference_gradient<F>(
    params: &PolicyParams,
    step: f64,
    mut f: F,
) -> Result<Gradients>
where
    F: FnMut(&PolicyParams) -> Result<f64>,
{
    let mut numeric = Gradients::zeros(params.dims);
    let mut work = params.clone();
    for block_idx in 0..5 {
        let len = work.blocks()[block_idx].1.len();
        for i in 0..len {
            let orig = work.blocks()[block_idx].1[i];
            work.blocks_mut()[block_idx].1[i] = orig + step;
            let plus = f(&work)?;
            work.blocks_mut()[block_idx].1[i] = orig - step;
            let minus = f(&work)?;
            work.blocks_mut()[block_idx].1[i] = orig;
            numeric.blocks_mut()[block_idx].1[i] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(numeric)
}

/// Per-block worst relative error between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct BlockError {
    pub block: &'static str,
    pub max_rel: f64,
}

/// Relative error per block: worst absolute difference scaled by the
/// block's gradient magnitude (floored so all-zero blocks compare cleanly).
pub fn compare_blocks(analytic: &Gradients, numeric: &Gradients) -> Vec<BlockError> {
    analytic
        .blocks()
        .iter()
        .zip(numeric.blocks().iter())
        .map(|((name, a), (_, n))| {
            let scale = a
                .iter()
                .chain(n.iter())
                .map(|x| x.abs())
                .fold(0.0, f64::max)
                .max(1e-8);
            let worst = a
                .iter()
                .zip(n.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            BlockError {
                block: name,
                max_rel: worst / scale,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub dims: ModelDims,
    /// Number of random (params, batch) scenarios; split between the
    /// token-mean and sequence-mean objectives.
    pub cases: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Multiplies one analytic block by (1 + fault) to prove the harness
    /// catches broken gradients. Zero in normal operation.
    pub fault_injection: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            dims: ModelDims {
                vocab: 12,
                embed: 8,
                context: 6,
                hidden: 16,
            },
            cases: 24,
            step: 1e-5,
            tolerance: 1e-5,
            fault_injection: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub cases: usize,
    /// Worst relative error observed per parameter block across all cases.
    pub block_max: Vec<(&'static str, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn print(&self) {
        for (block, err) in &self.block_max {
            println!(
                "block {block:<12} max rel err {err:.3e}  [{}]",
                if *err <= self.tolerance { "ok" } else { "FAIL" }
            );
        }
        println!(
            "gradcheck over {} cases: {}",
            self.cases,
            if self.passed { "PASS" } else { "FAIL" }
        );
    }
}

/// Build one random scenario: a snapshot policy, sampled rollouts grouped
/// with standardized advantages, and a slightly drifted current policy.
fn scenario(
    dims: ModelDims,
    path: &SeedPath,
) -> Result<(PolicyParams, PolicyParams, Vec<Trajectory>)> {
    let mut rng = path.rng();
    let mut old = PolicyParams::init(dims, &path.child(0));
    for (_, block) in old.blocks_mut() {
        for x in block.iter_mut() {
            *x = (rng.next_f64() * 2.0 - 1.0) * 0.3;
        }
    }
    let sampler = SamplerConfig {
        temperature: 1.0,
        top_p: 1.0,
        max_new_tokens: 6,
    };
    let prompt: Vec<u32> = (0..3)
        .map(|_| rng.uniform_index(dims.vocab) as u32)
        .collect();
    let n = 4;
    let mut trajs = crate::policy::sample_rollouts(&old, &prompt, n, &sampler, &path.child(1), 1)?;
    // standardized pseudo-rewards so advantages look like training data
    let raw: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-3);
    for (t, r) in trajs.iter_mut().zip(&raw) {
        t.reward = (r - mean) / std;
    }
    // current policy: small drift keeps ratios inside the clip band
    let mut cur = old.clone();
    for (_, block) in cur.blocks_mut() {
        for x in block.iter_mut() {
            *x += (rng.next_f64() * 2.0 - 1.0) * 0.005;
        }
    }
    Ok((cur, old, trajs))
}

/// Audit the analytic gradients of both surrogate objectives against
/// central finite differences across random scenarios.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    opts.dims.validate()?;
    if opts.cases == 0 {
        return Err(Error::Config("gradcheck needs at least one case".into()));
    }
    let mut block_max: Vec<(&'static str, f64)> = vec![
        ("embeddings", 0.0),
        ("w1", 0.0),
        ("b1", 0.0),
        ("w2", 0.0),
        ("b2", 0.0),
    ];

    for case in 0..opts.cases {
        let path = SeedPath::root(opts.seed).child(900).child(case as u64);
        let (cur, _old, trajs) = scenario(opts.dims, &path)?;
        let batch = LossBatch::from_trajectories(&trajs, |t| t.reward);
        let grpo_case = case % 2 == 1;
        let beta = if case % 4 == 3 { 0.05 } else { 0.0 };
        let cfg = TrainConfig {
            eps_low: 0.2,
            eps_high: 0.28,
            beta_kl: beta,
            loss_agg: if grpo_case {
                LossAgg::SequenceMean
            } else {
                LossAgg::TokenMean
            },
            ..TrainConfig::default()
        };
        let params_ref = PolicyParams::init(opts.dims, &path.child(7));

        let mut analytic = if grpo_case {
            grpo_objective_and_gradient(&batch, &cur, &params_ref, &cfg)?.grad
        } else {
            cure_objective_and_gradient(&batch, &cur, &cfg)?.grad
        };
        if opts.fault_injection != 0.0 {
            for x in analytic.w1.iter_mut() {
                *x *= 1.0 + opts.fault_injection;
            }
        }
        let numeric = finite_difference_gradient(&cur, opts.step, |p| {
            Ok(if grpo_case {
                grpo_objective_and_gradient(&batch, p, &params_ref, &cfg)?.value
            } else {
                cure_objective_and_gradient(&batch, p, &cfg)?.value
            })
        })?;
        for err in compare_blocks(&analytic, &numeric) {
            let slot = block_max
                .iter_mut()
                .find(|(n, _)| *n == err.block)
                .expect("known block");
            slot.1 = slot.1.max(err.max_rel);
        }
    }

    let passed = block_max.iter().all(|(_, e)| *e <= opts.tolerance);
    Ok(GradcheckReport {
        cases: opts.cases,
        block_max,
        tolerance: opts.tolerance,
        passed,
    })
}
