use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::eval::{objective_trace, ObjectiveTrace};
use crate::evolution::{evolve, EvolutionConfig, EvolutionReport, TaskEvidence};
use crate::insight::{Insight, InsightId, Task, TaskId};
use crate::solve::SolveContext;
use crate::store::{
    checksum, save, AppliedCommit, CommitQueue, LibrarySnapshot, PersistError, QueueError,
};

use super::batch::{learn_batch, BatchReport};
use super::order::{classify_missing, cluster_and_order};
use super::verify::{local_verify, resolve_context};
use super::{task_map, TaskMap, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("{misses} exchange(s) missing from the cassette while processing {task}")]
    CassetteMiss { task: TaskId, misses: usize },
    #[error("cannot archive library: {0}")]
    Archive(#[from] PersistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Plateau,
    MaxIterations,
    EmptyTrainingSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    /// Fraction of training tasks solved by at least one trial.
    pub accuracy: f64,
    pub solved: usize,
    pub total: usize,
    pub batches: Vec<BatchReport>,
    pub evolution: Option<EvolutionReport>,
    pub omega: usize,
    pub version: u64,
    pub checksum: String,
    pub trace: ObjectiveTrace,
    pub archive: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub iterations: Vec<IterationReport>,
    pub stop_reason: StopReason,
    pub final_version: u64,
    pub final_checksum: String,
    /// Every commit the queue applied, in order.
    pub commits: Vec<AppliedCommit>,
}

impl TrainReport {
    pub fn traces(&self) -> Vec<ObjectiveTrace> {
        self.iterations.iter().map(|i| i.trace).collect()
    }
}

fn check_misses(ctx: &SolveContext, cfg: &TrainConfig, stage: &str) -> Result<(), TrainError> {
    let misses = ctx.gateway.miss_count();
    if cfg.strict_cassette && misses > 0 {
        return Err(TrainError::CassetteMiss {
            task: stage.to_string(),
            misses,
        });
    }
    Ok(())
}

/// Archive file name for the library after `iteration`.
pub fn archive_name(iteration: u32) -> String {
    format!("library.v{iteration}.json")
}

/// Alternating learning and evolution rounds over the training tasks, in
/// dataset order and minibatches of `cfg.batch_size`. Stops once two
/// consecutive iteration accuracies differ by less than `cfg.plateau_eps`,
/// or after `cfg.max_iterations`. With `archive`, the library is saved there
/// after every iteration.
pub fn train(
    tasks: &[Task],
    initial: LibrarySnapshot,
    ctx: &SolveContext,
    cfg: &TrainConfig,
    archive: Option<&Path>,
) -> Result<(LibrarySnapshot, TrainReport), TrainError> {
    let mut report = TrainReport {
        config: cfg.clone(),
        iterations: Vec::new(),
        stop_reason: StopReason::MaxIterations,
        final_version: initial.version,
        final_checksum: checksum(&initial),
        commits: Vec::new(),
    };
    if tasks.is_empty() {
        report.stop_reason = StopReason::EmptyTrainingSet;
        return Ok((initial, report));
    }
    let mut tasks = tasks.to_vec();
    classify_missing(&mut tasks, &ctx.gateway);
    check_misses(ctx, cfg, "classification")?;
    let map = task_map(&tasks);
    let queue = CommitQueue::start(initial);
    let mut previous: Option<f64> = None;

    for iteration in 1..=cfg.max_iterations.max(1) {
        let mut batches = Vec::new();
        let mut evidence = Vec::new();
        for (index, chunk) in tasks.chunks(cfg.batch_size.max(1)).enumerate() {
            let ordered = cluster_and_order(chunk);
            let (batch_report, outcomes) =
                learn_batch(&ordered, &queue, ctx, &map, cfg, iteration, index)?;
            batches.push(batch_report);
            evidence.extend(outcomes.into_iter().map(|o| TaskEvidence {
                bundle: o.bundle,
                anchor: o.anchor,
            }));
        }
        let solved = evidence.iter().filter(|e| e.bundle.any_success).count();
        let total = tasks.len();
        let accuracy = solved as f64 / total as f64;

        let evolution = if cfg.evolve {
            let evo_cfg = EvolutionConfig {
                n_candidates: cfg.refine_candidates,
            };
            let r = evolve(&queue, &evidence, &map, ctx, &evo_cfg, iteration)?;
            check_misses(ctx, cfg, "evolution")?;
            Some(r)
        } else {
            None
        };

        let snap = queue.snapshot();
        let archive_path = match archive {
            Some(dir) => {
                let path = dir.join(archive_name(iteration));
                save(&snap, &path)?;
                Some(path)
            }
            None => None,
        };
        let trace = objective_trace(iteration, &snap, accuracy, cfg.lambda);
        info!(
            iteration,
            solved,
            total,
            omega = trace.omega,
            version = snap.version,
            "iteration complete"
        );
        report.iterations.push(IterationReport {
            iteration,
            accuracy,
            solved,
            total,
            batches,
            evolution,
            omega: trace.omega,
            version: snap.version,
            checksum: checksum(&snap),
            trace,
            archive: archive_path,
        });
        if previous.is_some_and(|p| (accuracy - p).abs() < cfg.plateau_eps) {
            report.stop_reason = StopReason::Plateau;
            break;
        }
        previous = Some(accuracy);
    }

    let last = queue.close();
    report.final_version = last.version;
    report.final_checksum = checksum(&last);
    report.commits = queue.applied();
    Ok(((*last).clone(), report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFailure {
    pub insight_id: InsightId,
    pub task_id: TaskId,
    pub reason: String,
}

/// The insight and everything merged into it, transitively.
fn constituents<'a>(snapshot: &'a LibrarySnapshot, insight: &'a Insight) -> Vec<&'a Insight> {
    let mut out = vec![insight];
    let mut stack = insight.absorbed.clone();
    while let Some(id) = stack.pop() {
        if let Some(i) = snapshot.insight(id) {
            out.push(i);
            stack.extend(i.absorbed.iter().copied());
        }
    }
    out
}

/// Replays local verification for every active insight on the source task
/// of each of its constituents.
pub fn audit_library(
    snapshot: &LibrarySnapshot,
    tasks: &TaskMap,
    ctx: &SolveContext,
) -> Vec<AuditFailure> {
    let mut failures = Vec::new();
    for insight in snapshot.active_insights() {
        let parts = constituents(snapshot, insight);
        let exclude: Vec<InsightId> = parts.iter().map(|p| p.id).collect();
        for part in parts {
            let task_id = &part.provenance.source_task_id;
            let Some(task) = tasks.get(task_id) else {
                failures.push(AuditFailure {
                    insight_id: insight.id,
                    task_id: task_id.clone(),
                    reason: "source task unavailable".into(),
                });
                continue;
            };
            let context =
                resolve_context(snapshot, &part.provenance.verification_context, &exclude);
            if !local_verify(
                insight,
                task,
                &context,
                snapshot.version,
                part.provenance.verification_lane,
                ctx,
            ) {
                warn!(insight = %insight.id, task = %task_id, "audit failure");
                failures.push(AuditFailure {
                    insight_id: insight.id,
                    task_id: task_id.clone(),
                    reason: "source task does not solve with the insight injected".into(),
                });
            }
        }
    }
    failures
}
