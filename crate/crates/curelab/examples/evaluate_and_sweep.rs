//! avg@k evaluation and a temperature sweep.
//!
//! Sweep entropy is measured on the temperature-adjusted distribution, so
//! it is non-decreasing in temperature for a fixed policy.
//!
//! ```bash
//! cargo run --release --example evaluate_and_sweep
//! ```

use curelab::env::Vocab;
use curelab::metrics::{avg_at_k, temperature_sweep, EvalConfig};
use curelab::policy::PolicyParams;
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
    let params = PolicyParams::init(dims, &SeedPath::root(4).child(0));
    let cfg = EvalConfig {
        k: 8,
        task_count: 50,
        max_new_tokens: 16,
        ..Default::default()
    };

    let summary = avg_at_k(&params, &vocab, &cfg, 1)?;
    println!(
        "untrained policy: avg@{} = {:.4} over {} tasks (roughly the 1-in-10 digit baseline)",
        cfg.k, summary.avg, cfg.task_count
    );
    println!(
        "first task outcomes: {:?} -> per-task avg {:.3}",
        summary.per_task[0].outcomes, summary.per_task[0].avg
    );

    println!(
        "\ntemperature sweep (entropy in nats, max ln {} = {:.3}):",
        vocab.size(),
        dims.max_entropy()
    );
    for row in temperature_sweep(&params, &vocab, &[0.4, 0.6, 0.8, 1.0, 1.5], &cfg, 1)? {
        println!(
            "  T={:<4} avg@{} = {:.4}  entropy {:.4}",
            row.temperature, row.k, row.avg, row.mean_entropy
        );
    }
    Ok(())
}
