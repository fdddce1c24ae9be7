//! The refinement phase: diagnose insight–task misalignment, propose new
//! applicability conditions, score them by retrieval replay and keep only
//! strict improvements.

mod diagnose;
mod refine;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::insight::{InsightId, Task, TaskId};
use crate::learning::{run_trials, self_explore, TaskMap};
use crate::solve::SolveContext;
use crate::store::{Commit, CommitOrigin, CommitPayload, CommitQueue, LibrarySnapshot, QueueError};

pub use diagnose::{
    diagnose, find_unretrieved, judge_role, DiagnosisRecord, EvidenceEntry, Judgement, TaskEvidence,
};
pub use refine::{
    propose_conditions, refine_insight, replay_condition, score_condition, score_counts,
    ProposedCondition, RefineDecision, RefinementCandidate, ReplayOutcome, ScoreCounts, Strategy,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvolutionError {
    #[error("insight {0} has no evidence to score against")]
    EmptyEvidenceSet(InsightId),
    #[error("unusable judge output: {0}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefinementOutcome {
    Accepted,
    NoChange,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsightRefinement {
    pub insight_id: InsightId,
    pub outcome: RefinementOutcome,
    pub before: String,
    pub after: Option<String>,
    pub strategy: Option<Strategy>,
    pub baseline: Option<ScoreCounts>,
    pub baseline_p: Option<f64>,
    pub accepted: Option<ScoreCounts>,
    pub accepted_p: Option<f64>,
    pub candidates: Vec<RefinementCandidate>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub iteration: u32,
    pub diagnosis: DiagnosisRecord,
    pub refinements: Vec<InsightRefinement>,
}

impl EvolutionReport {
    pub fn accepted(&self) -> impl Iterator<Item = &InsightRefinement> {
        self.refinements
            .iter()
            .filter(|r| r.outcome == RefinementOutcome::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub n_candidates: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self { n_candidates: 4 }
    }
}

/// One diagnose → propose → score → refine round. Profiles and accepted
/// refinements go through the queue; refinement is single-threaded.
pub fn evolve(
    queue: &CommitQueue,
    inputs: &[TaskEvidence],
    tasks: &TaskMap,
    ctx: &SolveContext,
    cfg: &EvolutionConfig,
    iteration: u32,
) -> Result<EvolutionReport, QueueError> {
    let origin = CommitOrigin {
        worker_id: 0,
        task_id: None,
        iteration,
    };
    let snapshot = queue.snapshot();
    let diagnosis = diagnose(inputs, tasks, &snapshot, ctx, iteration);
    for e in &diagnosis.evidence {
        queue.submit(Commit::new(
            CommitPayload::UpdateProfile {
                insight: e.insight_id,
                task: e.task_id.clone(),
                role: e.role,
            },
            origin.clone(),
        ))?;
    }
    let flagged: BTreeSet<InsightId> = diagnosis.evidence.iter().map(|e| e.insight_id).collect();
    let mut report = EvolutionReport {
        iteration,
        diagnosis,
        refinements: Vec::new(),
    };
    let lookup = |id: &str| tasks.get(id).cloned();
    for id in flagged {
        let snap = queue.snapshot();
        let Some(insight) = snap.insight(id).filter(|i| i.is_active()).cloned() else {
            continue;
        };
        let profile = snap.profile(id);
        let mut entry = InsightRefinement {
            insight_id: id,
            outcome: RefinementOutcome::Skipped,
            before: insight.condition.clone(),
            after: None,
            strategy: None,
            baseline: None,
            baseline_p: None,
            accepted: None,
            accepted_p: None,
            candidates: Vec::new(),
            note: String::new(),
        };
        let proposals =
            match propose_conditions(&insight, &profile, &lookup, &ctx.gateway, cfg.n_candidates) {
                Ok(p) if p.is_empty() => {
                    entry.note = "no negative or unretrieved evidence".into();
                    report.refinements.push(entry);
                    continue;
                }
                Ok(p) => p,
                Err(e) => {
                    entry.note = e.to_string();
                    report.refinements.push(entry);
                    continue;
                }
            };
        let replay = |condition: &str, task: &str, role| match tasks.get(task) {
            Some(t) => replay_condition(&snap, id, condition, t, role, ctx),
            None => ReplayOutcome::default(),
        };
        let baseline = match score_counts(&profile, |t, r| replay(&insight.condition, t, r)) {
            Ok(c) => c,
            Err(e) => {
                entry.note = e.to_string();
                report.refinements.push(entry);
                continue;
            }
        };
        entry.baseline = Some(baseline);
        entry.baseline_p = Some(baseline.p());
        for proposal in &proposals {
            if let Ok(c) = score_condition(id, proposal, &profile, |t, r| {
                replay(&proposal.condition, t, r)
            }) {
                entry.candidates.push(c);
            }
        }
        match refine_insight(baseline.p(), &entry.candidates) {
            RefineDecision::Accept { candidate, .. } => {
                queue.submit(Commit::new(
                    CommitPayload::RefineCondition {
                        insight: id,
                        condition: candidate.condition.clone(),
                        iteration,
                        reason: format!(
                            "{} refinement, p {:.3} -> {:.3}",
                            candidate.strategy,
                            baseline.p(),
                            candidate.p
                        ),
                        baseline_score: baseline.p(),
                        accepted_score: candidate.p,
                    },
                    origin.clone(),
                ))?;
                entry.outcome = RefinementOutcome::Accepted;
                entry.after = Some(candidate.condition.clone());
                entry.strategy = Some(candidate.strategy);
                entry.accepted = Some(candidate.counts);
                entry.accepted_p = Some(candidate.p);
            }
            RefineDecision::NoChange => {
                entry.outcome = RefinementOutcome::NoChange;
                entry.note = "no candidate beats the current condition".into();
            }
        }
        report.refinements.push(entry);
    }
    info!(
        iteration,
        accepted = report.accepted().count(),
        considered = report.refinements.len(),
        "evolution round complete"
    );
    Ok(report)
}

/// Trial bundles and anchors for a standalone evolution round: `n_trials`
/// solves per task against `snapshot`, with the anchor taken from the gold
/// program, a successful trial or self-exploration.
pub fn gather_evidence(
    tasks: &[Task],
    snapshot: &LibrarySnapshot,
    ctx: &SolveContext,
    n_trials: u32,
    explore_budget: u32,
    explore_temperature: f64,
) -> Vec<TaskEvidence> {
    tasks
        .iter()
        .map(|task| {
            let bundle = run_trials(task, snapshot, ctx, n_trials);
            let anchor = match (&task.gold_program, bundle.first_success()) {
                (Some(gold), _) => Some(gold.clone()),
                (None, Some(ok)) => Some(ok.program.clone()),
                (None, None) => {
                    let failed: Vec<_> = bundle.failed().collect();
                    self_explore(task, &failed, ctx, explore_budget, explore_temperature)
                        .reference_program
                }
            };
            TaskEvidence { bundle, anchor }
        })
        .collect()
}

/// Tasks named anywhere in a report's evidence.
pub fn evidence_tasks(report: &EvolutionReport) -> BTreeSet<TaskId> {
    report
        .diagnosis
        .evidence
        .iter()
        .map(|e| e.task_id.clone())
        .collect()
}
