//! Critical-token branching: locate high-entropy positions in sampled
//! rollouts, splice the preceding tokens onto the query as a refined prompt,
//! regenerate from that fork, and merge everything into one group.

use serde::{Deserialize, Serialize};

use crate::env::{self, RewardConfig, TaskInstance, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::policy::{sample_rollouts, Origin, PolicyParams, SamplerConfig, Trajectory};
use crate::rng::{Rng, SeedPath};

/// Branching knobs: `n1` initial rollouts per query, `n2` branch rollouts
/// per refined prompt, and the top-K candidate pool for fork selection.
/// Total group size is `n1 * (1 + n2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub n1: usize,
    pub n2: usize,
    pub top_k: usize,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            n1: 4,
            n2: 3,
            top_k: 4,
        }
    }
}

impl BranchConfig {
    pub fn group_size(&self) -> usize {
        self.n1 * (1 + self.n2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 {
            return Err(Error::Config("initial rollouts n1 must be >= 1".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// One fork decision made on an initial trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub parent_index: usize,
    /// 1-based selected position; always a member of `candidate_set`.
    pub t_star: usize,
    /// 1-based positions of the top-min(K, T) entropies, ascending.
    pub candidate_set: Vec<usize>,
    /// Parent tokens strictly before `t_star`.
    pub prefix: Vec<TokenId>,
    /// `query || prefix`, the initial state for branch rollouts.
    pub refined_prompt: Vec<TokenId>,
}

/// A fork with its regenerated rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub record: BranchRecord,
    pub rollouts: Vec<Trajectory>,
}

/// Every rollout attached to one query: `n1` initial plus `n1 * n2`
/// branched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub task: TaskInstance,
    pub initial: Vec<Trajectory>,
    pub branches: Vec<Branch>,
}

impl Group {
    /// Flattened view: initial rollouts first, then each fork's rollouts in
    /// parent order.
    pub fn all_trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.initial
            .iter()
            .chain(self.branches.iter().flat_map(|b| b.rollouts.iter()))
    }

    pub fn len(&self) -> usize {
        self.initial.len()
            + self
                .branches
                .iter()
                .map(|b| b.rollouts.len())
                .sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn verified_count(&self) -> usize {
        self.all_trajectories().filter(|t| t.verified).count()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.all_trajectories().map(|t| t.reward).collect()
    }
}

/// Pick a critical position in a trajectory: the candidate set holds the
/// min(top_k, len) highest-entropy positions (ties broken toward earlier
/// positions), and `t_star` is drawn uniformly from it.
pub fn select_critical(traj: &Trajectory, top_k: usize, rng: &mut Rng) -> (usize, Vec<usize>) {
    assert!(
        !traj.is_empty(),
        "cannot select a fork in an empty trajectory"
    );
    let len = traj.len();
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| {
        traj.entropies[b]
            .partial_cmp(&traj.entropies[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut candidates: Vec<usize> = order[..top_k.min(len)].iter().map(|&i| i + 1).collect();
    candidates.sort_unstable();
    let t_star = candidates[rng.uniform_index(candidates.len())];
    (t_star, candidates)
}

/// `query || traj.tokens[..t_star-1]`: the refined prompt for the fork at
/// 1-based position `t_star`.
pub fn refined_prompt(query: &[TokenId], traj: &Trajectory, t_star: usize) -> Vec<TokenId> {
    debug_assert!(t_star >= 1 && t_star <= traj.len());
    let mut out = Vec::with_capacity(query.len() + t_star - 1);
    out.extend_from_slice(query);
    out.extend_from_slice(&traj.tokens[..t_star - 1]);
    out
}

fn score(
    traj: &mut Trajectory,
    answer: u8,
    vocab: &Vocab,
    reward_cfg: &RewardConfig,
    prefix: &[TokenId],
) {
    let verified = if prefix.is_empty() {
        env::verify(vocab, answer, &traj.tokens)
    } else {
        let mut full = prefix.to_vec();
        full.extend_from_slice(&traj.tokens);
        env::verify(vocab, answer, &full)
    };
    traj.verified = verified;
    traj.reward = env::reward(verified, traj.len(), traj.truncated, reward_cfg);
}

/// Build the full group for one query against a frozen policy snapshot:
/// `n1` initial rollouts, one fork per initial rollout, `n2` branch rollouts
/// per fork, everything verified and rewarded.
///
/// A branch answers the original query, so its verification covers
/// `prefix || continuation`; its loss coverage downstream is the
/// continuation alone.
pub fn build_group(
    params_old: &PolicyParams,
    task: &TaskInstance,
    vocab: &Vocab,
    cfg: &BranchConfig,
    sampler: &SamplerConfig,
    reward_cfg: &RewardConfig,
    rng_path: &SeedPath,
) -> Result<Group> {
    cfg.validate()?;
    let mut initial = sample_rollouts(
        params_old,
        &task.prompt,
        cfg.n1,
        sampler,
        &rng_path.child(0),
        Vocab::EOS,
    )?;
    for traj in initial.iter_mut() {
        score(traj, task.answer, vocab, reward_cfg, &[]);
    }

    let mut branches = Vec::new();
    if cfg.n2 > 0 {
        for (i, parent) in initial.iter().enumerate() {
            let mut fork_rng = rng_path.child(1).child(i as u64).rng();
            let (t_star, candidate_set) = select_critical(parent, cfg.top_k, &mut fork_rng);
            let prefix = parent.tokens[..t_star - 1].to_vec();
            let prompt = refined_prompt(&task.prompt, parent, t_star);
            let mut rollouts = sample_rollouts(
                params_old,
                &prompt,
                cfg.n2,
                sampler,
                &rng_path.child(2).child(i as u64),
                Vocab::EOS,
            )?;
            for traj in rollouts.iter_mut() {
                traj.origin = Origin::Branch {
                    parent_index: i,
                    t_star,
                    prefix_len: t_star - 1,
                };
                score(traj, task.answer, vocab, reward_cfg, &prefix);
            }
            branches.push(Branch {
                record: BranchRecord {
                    parent_index: i,
                    t_star,
                    candidate_set,
                    prefix,
                    refined_prompt: prompt,
                },
                rollouts,
            });
        }
    }

    Ok(Group {
        task: task.clone(),
        initial,
        branches,
    })
}

/// One line-delimited record per trajectory: entropy-vs-position series,
/// the fork that was (or would be) taken, and glyph renderings for human
/// inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectRecord {
    pub traj: usize,
    pub origin: String,
    pub parent: Option<usize>,
    pub t_star: Option<usize>,
    pub candidates: Option<Vec<usize>>,
    pub entropies: Vec<f64>,
    pub prefix_glyphs: String,
    pub response_glyphs: String,
    pub reward: f64,
    pub verified: bool,
}

pub fn inspect_branch(group: &Group, vocab: &Vocab) -> Vec<InspectRecord> {
    let mut records = Vec::with_capacity(group.len());
    for (idx, traj) in group.initial.iter().enumerate() {
        let rec = group.branches.get(idx).map(|b| &b.record);
        records.push(InspectRecord {
            traj: records.len(),
            origin: "initial".into(),
            parent: None,
            t_star: rec.map(|r| r.t_star),
            candidates: rec.map(|r| r.candidate_set.clone()),
            entropies: traj.entropies.clone(),
            prefix_glyphs: String::new(),
            response_glyphs: vocab.render(&traj.tokens),
            reward: traj.reward,
            verified: traj.verified,
        });
    }
    for branch in &group.branches {
        for traj in &branch.rollouts {
            records.push(InspectRecord {
                traj: records.len(),
                origin: "branch".into(),
                parent: Some(branch.record.parent_index),
                t_star: Some(branch.record.t_star),
                candidates: Some(branch.record.candidate_set.clone()),
                entropies: traj.entropies.clone(),
                prefix_glyphs: vocab.render(&branch.record.prefix),
                response_glyphs: vocab.render(&traj.tokens),
                reward: traj.reward,
                verified: traj.verified,
            });
        }
    }
    records
}
