use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::insight::{Insight, InsightId, Task, TaskId};
use crate::solve::SolveContext;
use crate::store::{
    apply_commit, merge_check, Commit, CommitOrigin, CommitPayload, CommitQueue, LibrarySnapshot,
    MergeDecision, MergeSource, QueueError,
};

use super::explore::{self_explore, ExplorationState};
use super::extract::{extract_insights, ProposedInsight};
use super::train::TrainError;
use super::trials::{run_trials, TrialBundle};
use super::verify::{local_verify, resolve_context, verify_merged};
use super::{TaskMap, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRejection {
    pub task_id: TaskId,
    pub trial_index: u32,
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub source: InsightId,
    pub target: InsightId,
}

/// Everything one task produced in one learning round.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task_id: TaskId,
    pub bundle: TrialBundle,
    /// Gold program, a verified trial program, or the exploration reference.
    pub anchor: Option<String>,
    pub exploration: Option<ExplorationState>,
    /// Commits in application order, predicted against `read_version`.
    pub commits: Vec<Commit>,
    pub rejections: Vec<CandidateRejection>,
    pub notes: Vec<String>,
    pub read_version: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchReport {
    pub iteration: u32,
    pub index: usize,
    pub order: Vec<TaskId>,
    pub successes: Vec<TaskId>,
    pub failures: Vec<TaskId>,
    /// Failed trials per task, batch order.
    pub failed_trials: Vec<(TaskId, usize)>,
    pub added: Vec<InsightId>,
    pub merged: Vec<MergeRecord>,
    pub labels_added: Vec<String>,
    pub rejections: Vec<CandidateRejection>,
    pub consolidated: Vec<MergeRecord>,
    pub notes: Vec<String>,
}

fn same_content(a: &Insight, b: &Insight) -> bool {
    a.taxonomy.same_label(&b.taxonomy)
        && a.condition == b.condition
        && a.explanation == b.explanation
        && a.example == b.example
}

/// Applies `commit` to the local overlay and records it; the queue will see
/// the same sequence against the same base.
fn stage(
    overlay: &mut LibrarySnapshot,
    commits: &mut Vec<Commit>,
    commit: Commit,
) -> Result<Option<InsightId>, String> {
    match apply_commit(overlay, &commit) {
        Ok((next, receipt)) => {
            *overlay = next;
            commits.push(commit);
            Ok(receipt.assigned_id)
        }
        Err(r) => Err(r.to_string()),
    }
}

fn label_commits(
    overlay: &LibrarySnapshot,
    proposal: &ProposedInsight,
    origin: &CommitOrigin,
) -> Vec<Commit> {
    let path = &proposal.insight.taxonomy;
    if overlay.taxonomy.resolve(path).is_some() {
        return Vec::new();
    }
    let mut out = Vec::new();
    if overlay.taxonomy.level1(path.track, &path.level1).is_none() {
        out.push(Commit::new(
            CommitPayload::AddLabel {
                track: path.track,
                level1: path.level1.clone(),
                level2: None,
                condition: proposal.labels.level1.clone(),
            },
            origin.clone(),
        ));
    }
    out.push(Commit::new(
        CommitPayload::AddLabel {
            track: path.track,
            level1: path.level1.clone(),
            level2: Some(path.level2.clone()),
            condition: proposal.labels.level2.clone(),
        },
        origin.clone(),
    ));
    out
}

/// Trials, anchor acquisition, extraction, verification and merge checks for
/// one task against a fixed snapshot. Nothing is sent to the queue; the
/// resulting commits are predicted against a private overlay.
pub fn process_task(
    task: &Task,
    snapshot: &LibrarySnapshot,
    ctx: &SolveContext,
    tasks: &TaskMap,
    cfg: &TrainConfig,
    iteration: u32,
    worker_id: usize,
) -> TaskOutcome {
    let bundle = run_trials(task, snapshot, ctx, cfg.n_trials);
    let mut outcome = TaskOutcome {
        task_id: task.id.clone(),
        bundle,
        anchor: None,
        exploration: None,
        commits: Vec::new(),
        rejections: Vec::new(),
        notes: Vec::new(),
        read_version: snapshot.version,
    };
    let failed: Vec<_> = outcome.bundle.failed().cloned().collect();
    let mode = task.supervision_mode();
    outcome.anchor = match (&task.gold_program, outcome.bundle.first_success()) {
        (Some(gold), _) => Some(gold.clone()),
        (None, Some(ok)) => Some(ok.program.clone()),
        (None, None) => {
            let refs: Vec<_> = failed.iter().collect();
            let state = self_explore(
                task,
                &refs,
                ctx,
                cfg.explore_budget,
                cfg.explore_temperature,
            );
            let reference = state.reference_program.clone();
            outcome.exploration = Some(state);
            reference
        }
    };
    if failed.is_empty() {
        return outcome;
    }
    let Some(anchor) = outcome.anchor.clone() else {
        outcome
            .notes
            .push(format!("{}: exploration exhausted, no anchor", task.id));
        return outcome;
    };
    let origin = CommitOrigin {
        worker_id,
        task_id: Some(task.id.clone()),
        iteration,
    };
    let mut overlay = snapshot.clone();
    let mut seen: Vec<Insight> = Vec::new();
    for attempt in &failed {
        let (proposals, problems) =
            extract_insights(task, attempt, &anchor, mode, &overlay, ctx, iteration);
        for p in problems {
            outcome.rejections.push(CandidateRejection {
                task_id: task.id.clone(),
                trial_index: attempt.trial_index,
                label: String::new(),
                reason: p,
            });
        }
        for mut proposal in proposals {
            if seen.iter().any(|s| same_content(s, &proposal.insight)) {
                continue;
            }
            seen.push(proposal.insight.clone());
            let label = proposal.insight.taxonomy.to_string();
            let retrieved = attempt.retrieved_ids();
            let context = resolve_context(&overlay, &retrieved, &[]);
            if !local_verify(
                &proposal.insight,
                task,
                &context,
                overlay.version,
                attempt.trial_index,
                ctx,
            ) {
                outcome.rejections.push(CandidateRejection {
                    task_id: task.id.clone(),
                    trial_index: attempt.trial_index,
                    label,
                    reason: "local verification failed".into(),
                });
                continue;
            }
            proposal.insight.provenance.verification_context =
                context.iter().map(|i| i.id).collect();
            proposal.insight.provenance.verification_lane = attempt.trial_index;
            let mut staged = true;
            for c in label_commits(&overlay, &proposal, &origin) {
                if let Err(reason) = stage(&mut overlay, &mut outcome.commits, c) {
                    outcome.rejections.push(CandidateRejection {
                        task_id: task.id.clone(),
                        trial_index: attempt.trial_index,
                        label: label.clone(),
                        reason,
                    });
                    staged = false;
                    break;
                }
            }
            if !staged {
                continue;
            }
            let mut candidate = proposal.insight;
            if let Some(canonical) = overlay.taxonomy.resolve(&candidate.taxonomy) {
                candidate.taxonomy = canonical;
            }
            let decision = {
                let base = &overlay;
                merge_check(&candidate, base, &ctx.gateway, &mut |target, merged| {
                    verify_merged(target, merged, &[&candidate], base, tasks, ctx)
                })
            };
            let payload = match decision {
                MergeDecision::MergeInto { target, merged } => CommitPayload::MergeInsights {
                    target,
                    source: MergeSource::New(Box::new(candidate)),
                    merged,
                    iteration,
                },
                MergeDecision::Distinct => CommitPayload::AddInsight(Box::new(candidate)),
            };
            if let Err(reason) = stage(
                &mut overlay,
                &mut outcome.commits,
                Commit::new(payload, origin.clone()),
            ) {
                outcome.rejections.push(CandidateRejection {
                    task_id: task.id.clone(),
                    trial_index: attempt.trial_index,
                    label,
                    reason,
                });
            }
        }
    }
    outcome
}

struct Sequencer {
    turn: Mutex<usize>,
    cv: Condvar,
}

impl Sequencer {
    fn wait_for(&self, index: usize) -> std::sync::MutexGuard<'_, usize> {
        let mut turn = self.turn.lock().unwrap();
        while *turn != index {
            turn = self.cv.wait(turn).unwrap();
        }
        turn
    }
}

fn record_commits(
    report: &mut BatchReport,
    commits: &[Commit],
    receipts: &[crate::store::CommitReceipt],
) {
    for (c, r) in commits.iter().zip(receipts) {
        match &c.payload {
            CommitPayload::AddInsight(_) => report.added.extend(r.assigned_id),
            CommitPayload::MergeInsights { target, .. } => {
                if let Some(source) = r.assigned_id {
                    report.merged.push(MergeRecord {
                        source,
                        target: *target,
                    });
                }
            }
            CommitPayload::AddLabel {
                track,
                level1,
                level2,
                ..
            } => report.labels_added.push(match level2 {
                Some(l2) => format!("{} / {level1} / {l2}", track.as_str()),
                None => format!("{} / {level1}", track.as_str()),
            }),
            _ => {}
        }
    }
}

fn submit_all(
    queue: &CommitQueue,
    commits: &[Commit],
) -> Result<Vec<crate::store::CommitReceipt>, QueueError> {
    if commits.is_empty() {
        return Ok(Vec::new());
    }
    queue
        .enqueue_batch(commits.to_vec())?
        .into_iter()
        .map(|t| t.wait())
        .collect()
}

/// Merges verified duplicates already in the library (same level-2 label).
fn consolidate(
    queue: &CommitQueue,
    ctx: &SolveContext,
    tasks: &TaskMap,
    iteration: u32,
    report: &mut BatchReport,
) -> Result<(), TrainError> {
    let mut cursor = 0u64;
    loop {
        let snap = queue.snapshot();
        let next = snap
            .active_insights()
            .filter(|i| i.id.0 > cursor && snap.insights_under(&i.taxonomy).len() > 1)
            .map(|i| i.id)
            .next();
        let Some(id) = next else { break };
        cursor = id.0;
        let source = snap.insight(id).expect("listed above").clone();
        let decision = merge_check(&source, &snap, &ctx.gateway, &mut |target, merged| {
            verify_merged(target, merged, &[&source], &snap, tasks, ctx)
        });
        if let MergeDecision::MergeInto { target, merged } = decision {
            let commit = Commit::new(
                CommitPayload::MergeInsights {
                    target,
                    source: MergeSource::Existing(id),
                    merged,
                    iteration,
                },
                CommitOrigin {
                    worker_id: 0,
                    task_id: None,
                    iteration,
                },
            );
            queue.submit(commit)?;
            report.consolidated.push(MergeRecord { source: id, target });
        }
    }
    Ok(())
}

/// Learns from one ordered batch. Workers process tasks speculatively against
/// the latest snapshot, then take turns in batch order: a task whose snapshot
/// went stale is redone against the current one before its commits are
/// enqueued, so the outcome does not depend on the number of workers.
pub fn learn_batch(
    batch: &[Task],
    queue: &CommitQueue,
    ctx: &SolveContext,
    tasks: &TaskMap,
    cfg: &TrainConfig,
    iteration: u32,
    index: usize,
) -> Result<(BatchReport, Vec<TaskOutcome>), TrainError> {
    let mut report = BatchReport {
        iteration,
        index,
        order: batch.iter().map(|t| t.id.clone()).collect(),
        ..BatchReport::default()
    };
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let seq = Sequencer {
        turn: Mutex::new(0),
        cv: Condvar::new(),
    };
    let slots: Mutex<Vec<Option<TaskOutcome>>> = Mutex::new(vec![None; batch.len()]);
    let shared_report = Mutex::new(std::mem::take(&mut report));
    let failure: Mutex<Option<TrainError>> = Mutex::new(None);
    let workers = cfg.workers.clamp(1, batch.len().max(1));

    std::thread::scope(|scope| {
        for worker_id in 0..workers {
            let (next, abort, seq, slots, shared_report, failure) =
                (&next, &abort, &seq, &slots, &shared_report, &failure);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= batch.len() {
                    break;
                }
                let task = &batch[i];
                let speculative = (!abort.load(Ordering::SeqCst)).then(|| {
                    let snap = queue.snapshot();
                    let fork = ctx.fork();
                    let outcome =
                        process_task(task, &snap, &fork, tasks, cfg, iteration, worker_id);
                    (outcome, fork)
                });
                let mut turn = seq.wait_for(i);
                if !abort.load(Ordering::SeqCst) {
                    let current = queue.snapshot();
                    let (outcome, fork) = match speculative {
                        Some((o, f)) if o.read_version == current.version => (o, f),
                        _ => {
                            debug!(task = %task.id, "snapshot moved, redoing task");
                            let fork = ctx.fork();
                            let o = process_task(
                                task, &current, &fork, tasks, cfg, iteration, worker_id,
                            );
                            (o, fork)
                        }
                    };
                    let misses = fork.gateway.miss_count();
                    ctx.absorb(&fork);
                    if cfg.strict_cassette && misses > 0 {
                        abort.store(true, Ordering::SeqCst);
                        *failure.lock().unwrap() = Some(TrainError::CassetteMiss {
                            task: task.id.clone(),
                            misses,
                        });
                    } else {
                        match submit_all(queue, &outcome.commits) {
                            Ok(receipts) => record_commits(
                                &mut shared_report.lock().unwrap(),
                                &outcome.commits,
                                &receipts,
                            ),
                            Err(e) => {
                                warn!(task = %task.id, error = %e, "commit failed");
                                abort.store(true, Ordering::SeqCst);
                                *failure.lock().unwrap() = Some(TrainError::Queue(e));
                            }
                        }
                    }
                    slots.lock().unwrap()[i] = Some(outcome);
                }
                *turn += 1;
                seq.cv.notify_all();
                drop(turn);
            });
        }
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut report = shared_report.into_inner().unwrap();
    let outcomes: Vec<TaskOutcome> = slots.into_inner().unwrap().into_iter().flatten().collect();
    for o in &outcomes {
        if o.bundle.any_success {
            report.successes.push(o.task_id.clone());
        } else {
            report.failures.push(o.task_id.clone());
        }
        report
            .failed_trials
            .push((o.task_id.clone(), o.bundle.failed().count()));
        report.rejections.extend(o.rejections.iter().cloned());
        report.notes.extend(o.notes.iter().cloned());
    }
    consolidate(queue, ctx, tasks, iteration, &mut report)?;
    if cfg.strict_cassette && ctx.gateway.miss_count() > 0 {
        return Err(TrainError::CassetteMiss {
            task: "consolidation".into(),
            misses: ctx.gateway.miss_count(),
        });
    }
    info!(
        iteration,
        batch = index,
        solved = report.successes.len(),
        added = report.added.len(),
        merged = report.merged.len(),
        "batch learned"
    );
    Ok((report, outcomes))
}
