//! The full two-stage pipeline at toy size: explore with critical-token
//! branching, then consolidate with static initial-state sampling, and
//! evaluate avg@k before and after stage 2.
//!
//! ```bash
//! cargo run --release --example two_stage_pipeline
//! ```

use curelab::config::RunConfig;
use curelab::metrics::{avg_at_k, read_step_metrics};
use curelab::policy::Checkpoint;
use curelab::trainer::{run_training, Mode};

fn main() -> curelab::Result<()> {
    let cfg = RunConfig {
        seed: 2,
        run_label: "two-stage".into(),
        stage1_steps: 60,
        stage2_steps: 32,
        eval_task_count: 60,
        eval_k: 8,
        ..RunConfig::default()
    };

    let base = std::env::temp_dir().join("curelab-example-two-stage");
    let vocab = cfg.vocab()?;
    let mut eval_cfg = cfg.eval_config();
    eval_cfg.seed = 123;

    println!(
        "stage 1: exploration with branching (n1=4, n2=3, top-k={})",
        cfg.top_k_entropy
    );
    let s1 = run_training(&cfg.train_setup(Mode::CureS1)?, None, &base.join("s1"))?;
    let s1_rows = read_step_metrics(&s1.metrics_path)?;
    let s1_eval = avg_at_k(&s1.final_params, &vocab, &eval_cfg, 1)?;
    println!(
        "  {} steps, train entropy {:.3} -> {:.3}, avg@{} = {:.4} (entropy @0.6 = {:.3})",
        s1.steps_completed,
        s1_rows.first().map(|r| r.mean_entropy).unwrap_or(0.0),
        s1_rows.last().map(|r| r.mean_entropy).unwrap_or(0.0),
        eval_cfg.k,
        s1_eval.avg,
        s1_eval.mean_entropy
    );

    println!("stage 2: static initial-state sampling from the stage-1 checkpoint");
    let ckpt = Checkpoint::load(&s1.final_checkpoint)?;
    let s2 = run_training(
        &cfg.train_setup(Mode::CureS2)?,
        Some(&ckpt),
        &base.join("s2"),
    )?;
    let s2_eval = avg_at_k(&s2.final_params, &vocab, &eval_cfg, 1)?;
    println!(
        "  {} steps (numbering continued from {}), avg@{} = {:.4} (entropy @0.6 = {:.3})",
        s2.steps_completed, s2.start_step, eval_cfg.k, s2_eval.avg, s2_eval.mean_entropy
    );
    if let Some(abort) = &s2.abort {
        println!("  stage 2 stopped early: {abort}");
    }

    println!(
        "\nconsolidation delta: avg@{} {:+.4}, eval-temperature entropy {:+.4}",
        eval_cfg.k,
        s2_eval.avg - s1_eval.avg,
        s2_eval.mean_entropy - s1_eval.mean_entropy
    );
    Ok(())
}
