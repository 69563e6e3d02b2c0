//! A short DAPO training run: dynamic sampling, clip-higher token-mean
//! surrogate, AdamW with warmup, JSONL metrics.
//!
//! ```bash
//! cargo run --release --example train_dapo_quick
//! ```

use curelab::config::RunConfig;
use curelab::metrics::read_step_metrics;
use curelab::trainer::{run_training, Mode};

fn main() -> curelab::Result<()> {
    let cfg = RunConfig {
        seed: 5,
        run_label: "dapo-quick".into(),
        stage1_steps: 40,
        ..RunConfig::default()
    };

    let out = std::env::temp_dir().join("curelab-example-dapo");
    let setup = cfg.train_setup(Mode::Dapo)?;
    let report = run_training(&setup, None, &out)?;
    println!(
        "ran {} steps, metrics at {}",
        report.steps_completed,
        report.metrics_path.display()
    );
    if let Some(abort) = &report.abort {
        println!("aborted early: {abort}");
    }

    let rows = read_step_metrics(&report.metrics_path)?;
    println!("\nstep  lr        objective    grad_norm  reward  entropy  resp_len");
    for row in rows.iter().step_by(8) {
        println!(
            "{:>4}  {:.2e}  {:>+.4e}  {:.4}     {:.3}   {:.4}   {:.1}",
            row.step,
            row.lr,
            row.objective,
            row.grad_norm,
            row.mean_reward,
            row.mean_entropy,
            row.mean_resp_len
        );
    }
    println!("\nfinal checkpoint: {}", report.final_checkpoint.display());
    Ok(())
}
