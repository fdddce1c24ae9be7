use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use optinsight_core::eval::{
    case_study_report, evaluate, export_markdown, load_dataset, render_dataset, stratified_split,
    taxonomy_report, EvalReport, Fingerprint, OutcomeReport,
};
use optinsight_core::evolution::{evolve as evolve_round, gather_evidence, EvolutionConfig};
use optinsight_core::insight::{InsightId, Task};
use optinsight_core::learning::{task_map, train as train_library, TrainConfig};
use optinsight_core::llm::record_cassette;
use optinsight_core::solve::{SolveConfig, SolveContext};
use optinsight_core::store::persist::default_seed;
use optinsight_core::store::{checksum, load, save, CommitQueue, LibrarySnapshot};

use crate::context::{build_context, is_cassette, read_json, write_json, ProviderMode, SolveOpts};

pub const RUN_CONFIG: &str = "config.json";
pub const RUN_TASKS: &str = "tasks.jsonl";
pub const RUN_INITIAL: &str = "initial.json";
pub const RUN_LIBRARY: &str = "library.json";
pub const RUN_REPORT: &str = "report.json";
pub const RUN_TRANSCRIPT: &str = "transcript.json";
pub const RUN_CASSETTE: &str = "cassette.jsonl";
pub const RUN_CHECKSUM: &str = "checksum.txt";

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub provider: ProviderMode,
    pub solve: SolveConfig,
    pub train: TrainConfig,
    pub dataset: String,
}

fn load_library(path: Option<&Path>) -> Result<LibrarySnapshot> {
    match path {
        Some(p) => load(p).with_context(|| format!("loading library {}", p.display())),
        None => Ok(LibrarySnapshot::with_taxonomy(default_seed())),
    }
}

fn load_tasks(path: &Path) -> Result<Vec<Task>> {
    Ok(load_dataset(path)
        .with_context(|| format!("loading dataset {}", path.display()))?
        .tasks)
}

fn save_transcript(ctx: &SolveContext, dir: &Path) -> Result<()> {
    let transcript = ctx.gateway.transcript();
    write_json(&dir.join(RUN_TRANSCRIPT), &transcript)?;
    record_cassette(&transcript.exchanges, &dir.join(RUN_CASSETTE))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Starting library; defaults to an empty library on the bundled taxonomy seed.
    #[arg(long, value_name = "FILE")]
    pub library: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Train on a stratified fraction of the dataset; the rest is written as test.jsonl.
    #[arg(long, value_name = "FRACTION")]
    pub split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub max_iterations: u32,
    #[arg(long, default_value_t = 3)]
    pub trials: u32,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    pub plateau_eps: f64,
    #[arg(long, default_value_t = 5)]
    pub explore_budget: u32,
    /// Skip the refinement round after each learning round.
    #[arg(long)]
    pub no_evolve: bool,
}

pub fn train(opts: &SolveOpts, args: TrainArgs) -> Result<()> {
    if args.lambda < 0.0 {
        bail!("--lambda must be non-negative");
    }
    let (ctx, mode) = opts.context()?;
    let mut tasks = load_tasks(&args.dataset)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    if let Some(fraction) = args.split {
        let split = stratified_split(&tasks, fraction, args.seed)?;
        std::fs::write(args.out.join("test.jsonl"), render_dataset(&split.test))?;
        tasks = split.train;
    }
    let initial = load_library(args.library.as_deref())?;
    let cfg = TrainConfig {
        n_trials: args.trials,
        batch_size: args.batch_size,
        max_iterations: args.max_iterations,
        plateau_eps: args.plateau_eps,
        explore_budget: args.explore_budget,
        workers: opts.workers,
        lambda: args.lambda,
        strict_cassette: is_cassette(&mode),
        evolve: !args.no_evolve,
        ..TrainConfig::default()
    };
    let run = RunConfig {
        provider: mode,
        solve: (*ctx.config).clone(),
        train: cfg.clone(),
        dataset: args.dataset.display().to_string(),
    };
    write_json(&args.out.join(RUN_CONFIG), &run)?;
    std::fs::write(args.out.join(RUN_TASKS), render_dataset(&tasks))?;
    save(&initial, &args.out.join(RUN_INITIAL))?;

    let started = Instant::now();
    let result = train_library(&tasks, initial, &ctx, &cfg, Some(&args.out));
    save_transcript(&ctx, &args.out)?;
    let (library, report) = result?;
    save(&library, &args.out.join(RUN_LIBRARY))?;
    write_json(&args.out.join(RUN_REPORT), &report)?;
    std::fs::write(
        args.out.join(RUN_CHECKSUM),
        format!("{}\n", report.final_checksum),
    )?;
    for it in &report.iterations {
        println!(
            "iteration {}: solved {}/{} (accuracy {:.3}), active insights {}, F {:.4}",
            it.iteration, it.solved, it.total, it.accuracy, it.omega, it.trace.f
        );
    }
    println!(
        "stopped: {:?} after {:.1}s; library v{} checksum {}",
        report.stop_reason,
        started.elapsed().as_secs_f64(),
        report.final_version,
        report.final_checksum
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Run directory written by `train`.
    pub run: PathBuf,
}

pub fn replay(opts: &SolveOpts, args: ReplayArgs) -> Result<()> {
    let run: RunConfig = read_json(&args.run.join(RUN_CONFIG))?;
    let expected = std::fs::read_to_string(args.run.join(RUN_CHECKSUM))
        .with_context(|| format!("reading {}", args.run.join(RUN_CHECKSUM).display()))?
        .trim()
        .to_string();
    let tasks = load_tasks(&args.run.join(RUN_TASKS))?;
    let initial = load_library(Some(&args.run.join(RUN_INITIAL)))?;
    let cassette = opts
        .cassette
        .clone()
        .unwrap_or_else(|| args.run.join(RUN_CASSETTE));
    let ctx = build_context(&ProviderMode::Cassette(cassette), run.solve.clone())?;
    let cfg = TrainConfig {
        strict_cassette: true,
        workers: opts.workers,
        ..run.train
    };
    let (_, report) = train_library(&tasks, initial, &ctx, &cfg, None)?;
    if report.final_checksum != expected {
        bail!(
            "checksum mismatch: recorded {expected}, replayed {}",
            report.final_checksum
        );
    }
    println!("replay matches: {expected}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[arg(long, value_name = "FILE")]
    pub library: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "evolve")]
    pub out: PathBuf,
    /// Iteration number recorded in condition histories.
    #[arg(long, default_value_t = 1)]
    pub iteration: u32,
    #[arg(long, default_value_t = 3)]
    pub trials: u32,
    #[arg(long, default_value_t = 5)]
    pub explore_budget: u32,
    #[arg(long, default_value_t = 4)]
    pub candidates: usize,
}

pub fn evolve(opts: &SolveOpts, args: EvolveArgs) -> Result<()> {
    let (ctx, _) = opts.context()?;
    let library = load_library(Some(&args.library))?;
    let tasks = load_tasks(&args.dataset)?;
    let defaults = TrainConfig::default();
    let evidence = gather_evidence(
        &tasks,
        &library,
        &ctx,
        args.trials,
        args.explore_budget,
        defaults.explore_temperature,
    );
    let queue = CommitQueue::start(library);
    let cfg = EvolutionConfig {
        n_candidates: args.candidates,
    };
    let report = evolve_round(
        &queue,
        &evidence,
        &task_map(&tasks),
        &ctx,
        &cfg,
        args.iteration,
    )?;
    let library = queue.close();
    std::fs::create_dir_all(&args.out)?;
    save(&library, &args.out.join(RUN_LIBRARY))?;
    write_json(&args.out.join("evolution.json"), &report)?;
    save_transcript(&ctx, &args.out)?;
    for r in &report.refinements {
        println!(
            "insight {}: {:?} (p0 {} -> p {})",
            r.insight_id,
            r.outcome,
            r.baseline_p.map_or("-".into(), |p| format!("{p:.3}")),
            r.accepted_p.map_or("-".into(), |p| format!("{p:.3}"))
        );
    }
    println!(
        "library v{} checksum {}",
        library.version,
        checksum(&library)
    );
    Ok(())
}

/// Evaluation output: the fingerprint header, then the report and, for
/// paired runs, the retrieval-off arm and the case study.
#[derive(Debug, Serialize)]
struct EvalDocument {
    fingerprint: Fingerprint,
    report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    retrieval_off: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    case_study: Option<OutcomeReport>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Library to evaluate; defaults to an empty library.
    #[arg(long, value_name = "FILE")]
    pub library: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "eval_report.json")]
    pub out: PathBuf,
    /// Also evaluate with retrieval off and classify retrieved insights.
    #[arg(long)]
    pub paired: bool,
    /// Write the transcript and cassette next to the report.
    #[arg(long)]
    pub keep_transcript: bool,
}

fn summary(r: &EvalReport) -> String {
    let fmt = |v: Option<f64>| v.map_or("null".to_string(), |x| format!("{x:.3}"));
    format!(
        "solved {}/{}; micro {}; macro {}",
        r.solved(),
        r.total(),
        fmt(r.micro),
        fmt(r.macro_avg)
    )
}

pub fn eval(opts: &SolveOpts, args: EvalArgs) -> Result<()> {
    let (ctx, _) = opts.context()?;
    let library = load_library(args.library.as_deref())?;
    let tasks = load_tasks(&args.dataset)?;
    let report = evaluate(&library, &tasks, &ctx, opts.workers);
    println!("{}", summary(&report));
    let (retrieval_off, case_study) = if args.paired {
        let mut off_cfg = (*ctx.config).clone();
        off_cfg.retrieval.enabled = false;
        let off_ctx = ctx.with_config(off_cfg);
        let off = evaluate(&library, &tasks, &off_ctx, opts.workers);
        println!("retrieval off: {}", summary(&off));
        let study = case_study_report(&library, &tasks, &report, &off, &ctx.gateway)?;
        (Some(off), Some(study))
    } else {
        (None, None)
    };
    let doc = EvalDocument {
        fingerprint: report.fingerprint.clone(),
        report,
        retrieval_off,
        case_study,
    };
    write_json(&args.out, &doc)?;
    if args.keep_transcript {
        let dir = args
            .out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        save_transcript(&ctx, dir)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "FILE")]
    pub library: PathBuf,
    /// Insight id to print.
    #[arg(long, conflicts_with = "taxonomy")]
    pub insight: Option<u64>,
    /// Print the per-track and per-label distribution.
    #[arg(long)]
    pub taxonomy: bool,
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    let library = load_library(Some(&args.library))?;
    if let Some(id) = args.insight {
        let Some(i) = library.insight(InsightId(id)) else {
            bail!("no insight {id} in {}", args.library.display());
        };
        println!("Insight {} [{:?}]", i.id, i.status);
        println!("Taxonomy:    {}", i.taxonomy);
        println!("Condition:   {}", i.condition);
        println!("Explanation: {}", i.explanation);
        println!("Example:\n{}", i.example.trim_end());
        println!(
            "Source:      {} ({:?}, iteration {}, version {})",
            i.provenance.source_task_id,
            i.provenance.supervision_mode,
            i.provenance.created_iteration,
            i.provenance.created_version
        );
        println!("Condition history:");
        for r in &i.condition_history {
            println!(
                "  iteration {} ({}): {}",
                r.iteration, r.reason, r.condition
            );
        }
        let p = library.profile(i.id);
        if !p.is_empty() {
            println!(
                "Profile:     positive {:?}, negative {:?}, unretrieved {:?}",
                p.positive, p.negative, p.unretrieved
            );
        }
        return Ok(());
    }
    let dist = taxonomy_report(&library);
    if args.taxonomy {
        println!("{}", serde_json::to_string_pretty(&dist)?);
        return Ok(());
    }
    println!(
        "library v{} checksum {}",
        library.version,
        checksum(&library)
    );
    println!("active insights: {}", library.active_count());
    for t in &dist.tracks {
        println!("  {} {} ({:.1}%)", t.track, t.count, t.percent);
        for l in &t.level1 {
            println!("    {} {} ({:.1}%)", l.label, l.count, l.percent);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportFormat {
    Markdown,
    Json,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "FILE")]
    pub library: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: ExportFormat,
}

pub fn export(args: ExportArgs) -> Result<()> {
    let library = load_library(Some(&args.library))?;
    let text = match args.format {
        ExportFormat::Markdown => export_markdown(&library),
        ExportFormat::Json => {
            let active: Vec<_> = library.active_insights().collect();
            serde_json::to_string_pretty(&active)? + "\n"
        }
    };
    match args.out {
        Some(path) => {
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn split(args: SplitArgs) -> Result<()> {
    let tasks = load_tasks(&args.dataset)?;
    let split = stratified_split(&tasks, args.fraction, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("train.jsonl"), render_dataset(&split.train))?;
    std::fs::write(args.out.join("test.jsonl"), render_dataset(&split.test))?;
    for w in &split.warnings {
        eprintln!("warning: {w:?}");
    }
    println!("train {} / test {}", split.train.len(), split.test.len());
    Ok(())
}
