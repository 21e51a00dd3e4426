//! `phgpo` command-line driver: corpus generation, training with
//! checkpoints, evaluation, ablation runs and pheromone exports.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use phgpo_core::checkpoint::Checkpoint;
use phgpo_core::config::RunConfig;
use phgpo_core::environment::{generate_synthetic, write_corpus, SynthConfig};
use phgpo_core::metrics::{coverage_curve, mean_first_success, Heatmap};
use phgpo_core::trainer::Trainer;

const METRICS_FILE: &str = "metrics.jsonl";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const DISCOVERY_FILE: &str = "discovery.jsonl";
const CONFIG_FILE: &str = "config.json";

#[derive(Parser)]
#[command(name = "phgpo", version, about = "Pheromone-guided policy optimization for tool planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (corpus.jsonl and graph.json).
    Synth(SynthArgs),
    /// Train from a config file, writing metrics and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Train one ablation variant of a config.
    Ablate(AblateArgs),
    /// Export fused pheromone heatmaps from a checkpoint.
    Export(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    tools: usize,
    #[arg(long, default_value_t = 8)]
    categories: usize,
    #[arg(long, default_value_t = 3)]
    patterns: usize,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for rollouts.
    #[arg(long)]
    threads: Option<usize>,
    /// Stop after this many epochs in total (the run stays resumable).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Optional config whose `eval` section overrides the checkpoint's.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    variant: String,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated tool names forming the heatmap rows and columns.
    #[arg(long, value_delimiter = ',')]
    heatmap_tools: Vec<String>,
    /// Task id from the corpus, or free task text.
    #[arg(long)]
    task: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Export(a) => export(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_tools: a.tools,
        n_categories: a.categories,
        patterns_per_tool: a.patterns,
        n_episodes: a.episodes,
        horizon: a.horizon,
        seed: a.seed,
        ..Default::default()
    };
    let corpus = generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out)?;
    write_corpus(&a.out.join("corpus.jsonl"), &corpus.records())?;
    fs::write(a.out.join("graph.json"), serde_json::to_string_pretty(&corpus.graph.to_file())?)?;

    let lens: Vec<usize> = corpus.episodes.iter().map(|e| e.len()).collect();
    let mut used = std::collections::BTreeSet::new();
    for e in &corpus.episodes {
        used.extend(e.tools());
    }
    println!("episodes: {}", corpus.episodes.len());
    println!("tools: {} ({} used in references)", corpus.graph.n_tools(), used.len());
    println!("transition edges: {}", corpus.graph.transition_edges().len());
    println!("avg reference length: {:.2}", lens.iter().sum::<usize>() as f64 / lens.len() as f64);
    println!("max reference length: {}", lens.iter().max().copied().unwrap_or(0));
    Ok(())
}

/// Loads a config and applies the `PHGPO_SEED` override.
fn load_config(path: &Path) -> Result<RunConfig> {
    if !path.exists() {
        bail!("config file {} does not exist", path.display());
    }
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Ok(s) = std::env::var("PHGPO_SEED") {
        cfg.seed = s.parse().with_context(|| format!("PHGPO_SEED `{s}` is not an integer"))?;
    }
    Ok(cfg)
}

fn output_dir(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    out.or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set output_dir in the config")
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.run.config)?;
    let dir = output_dir(&cfg, a.run.out.clone())?;
    pipeline(cfg, &dir, &a.run, a.resume)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = load_config(&a.run.config)?.with_variant(&a.variant)?;
    let dir = output_dir(&cfg, a.run.out.clone())?.join(&a.variant);
    pipeline(cfg, &dir, &a.run, false)
}

/// Trains to completion (or `--stop-after`), checkpointing along the way,
/// then writes the test evaluation and discovery records.
fn pipeline(mut cfg: RunConfig, dir: &Path, run: &RunArgs, resume: bool) -> Result<()> {
    if let Some(t) = run.threads {
        cfg.trainer.threads = t;
    }
    fs::create_dir_all(dir)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    let mut trainer = if resume {
        let mut ckpt =
            Checkpoint::load(&ckpt_path).with_context(|| format!("resuming from {}", ckpt_path.display()))?;
        if run.threads.is_some() {
            ckpt.config.trainer.threads = cfg.trainer.threads;
        }
        let t = ckpt.restore()?;
        truncate_log(&metrics_path, t.progress.epoch_next)?;
        t
    } else {
        cfg.output_dir = Some(dir.to_path_buf());
        cfg.save(&dir.join(CONFIG_FILE))?;
        File::create(&metrics_path)?;
        Trainer::new(cfg)?
    };

    let end = run.stop_after.unwrap_or(usize::MAX).min(trainer.total_epochs());
    let every = trainer.config.checkpoint_every;
    let mut log = fs::OpenOptions::new().append(true).open(&metrics_path)?;
    while trainer.progress.epoch_next < end {
        let m = trainer.train_epoch()?;
        writeln!(log, "{}", serde_json::to_string(&m)?)?;
        log.flush()?;
        if every > 0 && trainer.progress.epoch_next % every == 0 {
            trainer.checkpoint().save(&ckpt_path)?;
        }
        eprintln!(
            "epoch {:>3} stage {} h={:<2} return {:.3} match {:.3} diversity {:.3}",
            m.epoch, m.stage, m.horizon, m.avg_return, m.match_ratio, m.diversity
        );
    }
    trainer.checkpoint().save(&ckpt_path)?;
    if !trainer.is_finished() {
        eprintln!("stopped at epoch {}; continue with --resume", trainer.progress.epoch_next);
        return Ok(());
    }

    let discovery = trainer.discovery();
    let mut f = File::create(dir.join(DISCOVERY_FILE))?;
    for r in &discovery {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    let total = trainer.total_steps();
    let coverage = coverage_curve(&discovery, total);
    eprintln!(
        "mean first-success step {:.1}, final coverage {:.3}",
        mean_first_success(&discovery, total),
        coverage.last().copied().unwrap_or(0.0)
    );
    if !trainer.test.is_empty() {
        let report = trainer.evaluate("test")?;
        fs::write(dir.join("eval_test.json"), serde_json::to_string_pretty(&report)?)?;
        eprintln!("test match ratio {:.4}", report.match_ratio_mean);
    }
    Ok(())
}

/// Drops log lines for epochs at or after `keep`, so a resumed run appends
/// exactly where its checkpoint left off.
fn truncate_log(path: &Path, keep: usize) -> Result<()> {
    let lines: Vec<String> = match File::open(path) {
        Ok(f) => BufReader::new(f).lines().take(keep).collect::<std::io::Result<_>>()?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    if lines.len() != keep {
        bail!("{} has {} lines but the checkpoint is at epoch {keep}", path.display(), lines.len());
    }
    let mut f = File::create(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    if let Some(path) = &a.config {
        ckpt.config.eval = load_config(path)?.eval;
    }
    let trainer = ckpt.restore()?;
    let report = trainer.evaluate(&a.split)?;
    let text = serde_json::to_string_pretty(&report)?;
    match a.out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    if a.heatmap_tools.is_empty() {
        bail!("--heatmap-tools needs at least one tool name");
    }
    let trainer = Trainer::from_checkpoint(&a.checkpoint)?;
    let task = trainer
        .train
        .iter()
        .chain(&trainer.val)
        .chain(&trainer.test)
        .find(|t| t.episode.task_id == a.task);
    let (text, chain) = match task {
        Some(t) => (
            t.episode.text.clone(),
            t.episode.tools().into_iter().map(|id| trainer.graph.name(id).to_string()).collect(),
        ),
        None => (a.task.clone(), Vec::new()),
    };
    let w = trainer.schedule(trainer.progress.epoch_next.saturating_sub(1)).w;
    let heat = Heatmap::compute(
        &trainer.graph,
        &trainer.pheromones,
        &trainer.config.pheromone,
        &a.heatmap_tools,
        &text,
        trainer.config.trainer.embedding_dim,
        w,
    )?;
    fs::create_dir_all(&a.out)?;
    heat.write_csv(&a.out.join("heatmap.csv"))?;
    heat.write_edges_csv(&a.out.join("edges.csv"), &chain)?;
    Ok(())
}
