//! Operator surface: thin subcommands over the library.
//!
//! Precedence for every setting: config file < environment (`CURELAB_OUT_DIR`
//! and `CURELAB_WORKERS` only) < command-line flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::branching::{build_group, inspect_branch};
use crate::config::RunConfig;
use crate::env::{generate_task, TaskStream, Vocab};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckOptions};
use crate::metrics::{avg_at_k, run_header, temperature_sweep, JsonlWriter};
use crate::policy::{Checkpoint, ModelDims};
use crate::rng::SeedPath;
use crate::trainer::{run_training, Mode};

pub const ENV_OUT_DIR: &str = "CURELAB_OUT_DIR";
pub const ENV_WORKERS: &str = "CURELAB_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "curelab",
    version,
    about = "Desk-scale lab for entropy-preserving RL training with verifiable rewards"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded task dump and the vocabulary mapping file.
    GenData(GenDataArgs),
    /// Train in one of four modes: grpo | dapo | cure-s1 | cure-s2.
    Train(TrainArgs),
    /// Evaluate a checkpoint: avg@k, optionally a temperature sweep.
    Eval(EvalArgs),
    /// Audit analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Build one rollout group and dump branch-inspection records.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Config file (TOML); defaults apply when omitted.
    #[arg(short = 'c', long)]
    pub config: Option<PathBuf>,
    /// Number of tasks to dump.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub difficulty: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(short = 'c', long)]
    pub config: Option<PathBuf>,
    /// grpo | dapo | cure-s1 | cure-s2
    #[arg(long)]
    pub mode: String,
    /// Checkpoint to continue from (expected for cure-s2).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Override the active stage's step budget.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(short = 'c', long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Comma-separated temperatures for a sweep report, e.g. 0.6,0.8,1.0
    #[arg(long)]
    pub temps: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub cases: usize,
    #[arg(long, default_value_t = 12)]
    pub vocab: usize,
    #[arg(long, default_value_t = 8)]
    pub embed: usize,
    #[arg(long, default_value_t = 6)]
    pub context: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(short = 'c', long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
    #[arg(long)]
    pub difficulty: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
        Command::Inspect(args) => cmd_inspect(&args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Effective output directory and worker count: config file < environment
/// (`CURELAB_OUT_DIR`, `CURELAB_WORKERS`) < flags. These are execution
/// knobs, kept out of the config echo so that identical config + seed give
/// bit-identical output streams at any worker count.
pub fn effective_out_and_workers(
    cfg: &RunConfig,
    out_flag: &Option<String>,
    workers_flag: Option<usize>,
) -> Result<(PathBuf, usize)> {
    let mut out_dir = cfg.out_dir.clone();
    let mut workers = cfg.workers;
    if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
        if !dir.is_empty() {
            out_dir = dir;
        }
    }
    if let Ok(w) = std::env::var(ENV_WORKERS) {
        if !w.is_empty() {
            workers = w.parse().map_err(|_| {
                Error::Config(format!("{ENV_WORKERS} must be an integer, got '{w}'"))
            })?;
        }
    }
    if let Some(dir) = out_flag {
        out_dir = dir.clone();
    }
    if let Some(w) = workers_flag {
        workers = w;
    }
    if workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    Ok((PathBuf::from(out_dir), workers))
}

/// Reconstruct the task vocabulary implied by a checkpoint's model shape.
fn vocab_for_checkpoint(ckpt: &Checkpoint) -> Result<Vocab> {
    let v = ckpt.params.dims.vocab;
    if v < 16 {
        return Err(Error::Config(format!(
            "checkpoint vocab {v} is smaller than the 16 reserved task tokens"
        )));
    }
    Vocab::new(v - 16)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(d) = args.difficulty {
        cfg.difficulty = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if args.count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    let (out, _) = effective_out_and_workers(&cfg, &args.out_dir, None)?;
    let vocab = cfg.vocab()?;
    std::fs::create_dir_all(&out)?;

    let tasks_path = out.join("tasks.jsonl");
    let mut writer = JsonlWriter::create(&tasks_path)?;
    writer.write(&run_header(
        &cfg.run_label,
        cfg.seed,
        "gen-data",
        cfg.echo(),
    ))?;
    let mut stream = TaskStream::new(SeedPath::root(cfg.seed).child(1), cfg.difficulty);
    for _ in 0..args.count {
        writer.write(&stream.next_task(&vocab))?;
    }
    writer.flush()?;

    let vocab_path = out.join("vocab.txt");
    let mut table = String::from("# id\tglyph\tname\n");
    table.push_str(&vocab.mapping_table());
    std::fs::write(&vocab_path, table)?;

    println!(
        "wrote {} tasks to {} and vocabulary mapping to {}",
        args.count,
        tasks_path.display(),
        vocab_path.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(label) = &args.label {
        cfg.run_label = label.clone();
    }
    let mode: Mode = args.mode.parse()?;
    if let Some(steps) = args.steps {
        match mode {
            Mode::CureS2 => cfg.stage2_steps = steps,
            _ => cfg.stage1_steps = steps,
        }
    }
    // validation happens before anything is written
    cfg.validate()?;
    let (out, workers) = effective_out_and_workers(&cfg, &args.out_dir, args.workers)?;

    let resume = match &args.resume {
        Some(path) => Some(Checkpoint::load(path)?),
        None => {
            if mode == Mode::CureS2 {
                eprintln!(
                    "warning: cure-s2 without --resume trains from fresh parameters \
                     (ablation mode)"
                );
            }
            None
        }
    };
    let parent_hash = resume.as_ref().map(|c| c.content_hash());

    let mut setup = cfg.train_setup(mode)?;
    setup.workers = workers;
    let report = run_training(&setup, resume.as_ref(), &out)?;

    let summary = serde_json::json!({
        "kind": "summary",
        "mode": mode.label(),
        "label": cfg.run_label,
        "seed": cfg.seed,
        "completed": report.abort.is_none(),
        "abort": report.abort,
        "start_step": report.start_step,
        "steps_completed": report.steps_completed,
        "metrics": report.metrics_path.to_string_lossy(),
        "final_checkpoint": report.final_checkpoint.to_string_lossy(),
        "parent_checkpoint": args.resume.as_ref().map(|p| p.to_string_lossy().into_owned()),
        "parent_checkpoint_hash": parent_hash,
    });
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    match report.abort {
        None => {
            println!(
                "{} finished {} steps (from step {}); metrics at {}",
                mode.label(),
                report.steps_completed,
                report.start_step,
                report.metrics_path.display()
            );
            Ok(())
        }
        Some(msg) => Err(Error::TrainingAborted(msg)),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(k) = args.k {
        cfg.eval_k = k;
    }
    if let Some(t) = args.temperature {
        cfg.eval_temperature = t;
    }
    if let Some(p) = args.top_p {
        cfg.eval_top_p = p;
    }
    if let Some(n) = args.tasks {
        cfg.eval_task_count = n;
    }
    if let Some(s) = args.seed {
        cfg.eval_seed = s;
    }
    let eval_cfg = cfg.eval_config();
    eval_cfg.validate()?;
    let (out, workers) = effective_out_and_workers(&cfg, &args.out_dir, args.workers)?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let vocab = vocab_for_checkpoint(&ckpt)?;
    std::fs::create_dir_all(&out)?;

    let summary = avg_at_k(&ckpt.params, &vocab, &eval_cfg, workers)?;
    let report_path = out.join("eval_report.jsonl");
    let mut writer = JsonlWriter::create(&report_path)?;
    writer.write(&run_header(
        &cfg.run_label,
        eval_cfg.seed,
        &format!("eval:{}", ckpt.mode),
        cfg.echo(),
    ))?;
    for record in &summary.per_task {
        writer.write(record)?;
    }
    writer.flush()?;
    println!(
        "avg@{} = {:.4} over {} tasks (temperature {}, top-p {}, entropy {:.4} nats)",
        eval_cfg.k,
        summary.avg,
        eval_cfg.task_count,
        eval_cfg.temperature,
        eval_cfg.top_p,
        summary.mean_entropy
    );

    if let Some(temps) = &args.temps {
        let temps: Vec<f64> = temps
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad temperature '{t}' in --temps")))
            })
            .collect::<Result<_>>()?;
        let rows = temperature_sweep(&ckpt.params, &vocab, &temps, &eval_cfg, workers)?;
        let sweep_path = out.join("sweep_report.jsonl");
        let mut writer = JsonlWriter::create(&sweep_path)?;
        writer.write(&run_header(
            &cfg.run_label,
            eval_cfg.seed,
            &format!("sweep:{}", ckpt.mode),
            cfg.echo(),
        ))?;
        for row in &rows {
            writer.write(row)?;
            println!(
                "temperature {:.2}: avg@{} = {:.4}, entropy {:.4} nats",
                row.temperature, row.k, row.avg, row.mean_entropy
            );
        }
        writer.flush()?;
    }
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let opts = GradcheckOptions {
        seed: args.seed,
        dims: ModelDims {
            vocab: args.vocab,
            embed: args.embed,
            context: args.context,
            hidden: args.hidden,
        },
        cases: args.cases,
        tolerance: args.tolerance,
        ..Default::default()
    };
    let report = run_gradcheck(&opts)?;
    report.print();
    if report.passed {
        Ok(())
    } else {
        let worst = report
            .block_max
            .iter()
            .map(|(n, e)| format!("{n}={e:.3e}"))
            .collect::<Vec<_>>()
            .join(", ");
        Err(Error::GradcheckFailed(format!(
            "max relative errors {worst} exceed tolerance {:.1e}",
            report.tolerance
        )))
    }
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(d) = args.difficulty {
        cfg.difficulty = d;
    }
    if let Some(n1) = args.n1 {
        cfg.initial_rollouts_n1 = n1;
    }
    if let Some(n2) = args.n2 {
        cfg.reprompt_rollouts_n2 = n2;
    }
    if let Some(k) = args.top_k {
        cfg.top_k_entropy = k;
    }
    if cfg.initial_rollouts_n1 == 0 {
        return Err(Error::Config("n1 must be >= 1".into()));
    }

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let vocab = vocab_for_checkpoint(&ckpt)?;
    let branch = crate::branching::BranchConfig {
        n1: cfg.initial_rollouts_n1,
        n2: cfg.reprompt_rollouts_n2,
        top_k: cfg.top_k_entropy,
    };
    let base = SeedPath::root(args.task_seed);
    let task = generate_task(&vocab, base.child(1), cfg.difficulty);
    let group = build_group(
        &ckpt.params,
        &task,
        &vocab,
        &branch,
        &cfg.sampler(),
        &cfg.reward_config(),
        &base.child(2),
    )?;
    for record in inspect_branch(&group, &vocab) {
        println!("{}", serde_json::to_string(&record)?);
    }
    Ok(())
}
