//! Build one critical-token group and walk through its forks.
//!
//! Each initial rollout is forked at one of its top-K highest-entropy
//! positions; the tokens before the fork are spliced onto the query as a
//! refined prompt and regenerated. The group merges everything:
//! n1 + n1*n2 trajectories.
//!
//! ```bash
//! cargo run --release --example branch_groups
//! ```

use curelab::branching::{build_group, inspect_branch, BranchConfig};
use curelab::env::{generate_task, RewardConfig, Vocab};
use curelab::policy::{PolicyParams, SamplerConfig};
use curelab::rng::SeedPath;
use curelab::ModelDims;

fn main() -> curelab::Result<()> {
    let vocab = Vocab::new(8)?;
    let dims = ModelDims {
        vocab: vocab.size(),
        embed: 16,
        context: 12,
        hidden: 32,
    };
    let params = PolicyParams::init(dims, &SeedPath::root(21).child(0));
    let task = generate_task(&vocab, SeedPath::root(21).child(1), 3);
    let cfg = BranchConfig {
        n1: 4,
        n2: 3,
        top_k: 4,
    };
    let group = build_group(
        &params,
        &task,
        &vocab,
        &cfg,
        &SamplerConfig::default(),
        &RewardConfig::default(),
        &SeedPath::root(22),
    )?;

    println!(
        "query {} (answer {}) -> group of {} = {} initial + {}x{} branched\n",
        vocab.render(&task.prompt),
        task.answer,
        group.len(),
        cfg.n1,
        cfg.n1,
        cfg.n2
    );

    for branch in &group.branches {
        let rec = &branch.record;
        let parent = &group.initial[rec.parent_index];
        println!(
            "parent {}: {:<34} fork t*={} of candidates {:?}",
            rec.parent_index,
            vocab.render(&parent.tokens),
            rec.t_star,
            rec.candidate_set
        );
        println!("  refined prompt: {}", vocab.render(&rec.refined_prompt));
        for (j, r) in branch.rollouts.iter().enumerate() {
            println!(
                "  continuation {j}: {:<30} verified={}",
                vocab.render(&r.tokens),
                r.verified
            );
        }
    }

    println!("\nline-delimited inspection records:");
    for record in inspect_branch(&group, &vocab).iter().take(5) {
        println!("{}", serde_json::to_string(record).expect("serializes"));
    }
    println!("...");
    Ok(())
}
