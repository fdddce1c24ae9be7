use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use crate::insight::{
    Attempt, EvidenceRole, Insight, InsightId, PerformanceProfile, Task, TaskId, Verdict,
};
use crate::learning::{resolve_context, TrialBundle};
use crate::llm::{ids, parse, vars, CallOptions, LlmGateway};
use crate::solve::{solve_injected, SolveContext};
use crate::store::LibrarySnapshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceEntry {
    pub insight_id: InsightId,
    pub task_id: TaskId,
    pub role: EvidenceRole,
    /// Verdict of the re-solve with this insight removed.
    pub ablation: Option<Verdict>,
    /// Verdict of the re-solve with this insight injected.
    pub injection: Option<Verdict>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub iteration: u32,
    pub evidence: Vec<EvidenceEntry>,
    pub skipped: Vec<String>,
}

impl DiagnosisRecord {
    pub fn new(iteration: u32) -> Self {
        Self {
            iteration,
            ..Self::default()
        }
    }

    /// Adds an entry unless the (insight, task) pair already has one.
    pub fn push(&mut self, entry: EvidenceEntry) -> bool {
        if self
            .evidence
            .iter()
            .any(|e| e.insight_id == entry.insight_id && e.task_id == entry.task_id)
        {
            return false;
        }
        self.evidence.push(entry);
        true
    }

    /// Per-insight profile deltas implied by the evidence.
    pub fn profile_deltas(&self) -> BTreeMap<InsightId, PerformanceProfile> {
        let mut out: BTreeMap<InsightId, PerformanceProfile> = BTreeMap::new();
        for e in &self.evidence {
            out.entry(e.insight_id)
                .or_insert_with(|| PerformanceProfile::new(e.insight_id))
                .assign(&e.task_id, e.role);
        }
        out
    }

    /// Roles are unique per pair; negatives carry a successful ablation and
    /// unretrieved entries a successful injection.
    pub fn check(&self) -> Result<(), String> {
        for (i, e) in self.evidence.iter().enumerate() {
            if self.evidence[..i]
                .iter()
                .any(|o| o.insight_id == e.insight_id && o.task_id == e.task_id)
            {
                return Err(format!(
                    "duplicate evidence for insight {} on {}",
                    e.insight_id, e.task_id
                ));
            }
            match e.role {
                EvidenceRole::Negative if e.ablation != Some(Verdict::Success) => {
                    return Err(format!(
                        "negative evidence for {} on {} lacks a successful ablation",
                        e.insight_id, e.task_id
                    ))
                }
                EvidenceRole::Unretrieved if e.injection != Some(Verdict::Success) => {
                    return Err(format!(
                        "unretrieved evidence for {} on {} lacks a successful injection",
                        e.insight_id, e.task_id
                    ))
                }
                _ => {}
            }
        }
        if !self
            .profile_deltas()
            .values()
            .all(PerformanceProfile::is_disjoint)
        {
            return Err("profile roles overlap".into());
        }
        Ok(())
    }
}

/// Per-task input to diagnosis.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEvidence {
    pub bundle: TrialBundle,
    pub anchor: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    Positive,
    Negative,
    Neutral,
}

#[derive(Deserialize)]
struct RoleReply {
    role: String,
    #[serde(default)]
    rationale: String,
}

fn outcome_text(a: &Attempt) -> String {
    match a.objective() {
        Some(v) => format!("{:?}; reported objective {v}", a.verdict),
        None => format!("{:?}", a.verdict),
    }
}

/// Judge call on one (insight, attempt) pair. `None` when unusable.
pub fn judge_role(
    task: &Task,
    insight: &Insight,
    attempt: &Attempt,
    gateway: &LlmGateway,
) -> Option<(Judgement, String)> {
    let v = vars([
        ("task_description", task.description.clone()),
        ("insight", insight.prompt_block()),
        ("formulation", attempt.formulation.clone()),
        ("program", attempt.program.clone()),
        ("outcome", outcome_text(attempt)),
    ]);
    let reply = gateway
        .complete(ids::DIAGNOSE_POS_NEG, &v, CallOptions::default())
        .ok()?;
    let parsed = parse::parse_json::<RoleReply>(&reply)?;
    let j = match parsed.role.trim().to_lowercase().as_str() {
        "positive" => Judgement::Positive,
        "negative" => Judgement::Negative,
        "neutral" => Judgement::Neutral,
        _ => return None,
    };
    Some((j, parsed.rationale))
}

#[derive(Deserialize)]
struct UnretrievedReply {
    id: u64,
}

/// Library insights that were not retrieved for a failed attempt but fix it
/// when injected, each with its injection verdict. Needs an anchor.
pub fn find_unretrieved(
    task: &Task,
    anchor: &str,
    attempt: &Attempt,
    snapshot: &LibrarySnapshot,
    ctx: &SolveContext,
) -> Vec<(InsightId, Verdict)> {
    let v = vars([
        ("task_description", task.description.clone()),
        ("generated_program", attempt.program.clone()),
        ("anchor_program", anchor.to_string()),
    ]);
    let Some(discrepancies) = ctx
        .gateway
        .complete(ids::DIAGNOSE_ISSUES, &v, CallOptions::default())
        .ok()
        .and_then(|r| parse::parse_json::<Vec<String>>(&r))
    else {
        return Vec::new();
    };
    if discrepancies.is_empty() {
        return Vec::new();
    }
    let retrieved = resolve_context(snapshot, &attempt.retrieved_ids(), &[]);
    let candidates: Vec<&Insight> = snapshot
        .active_insights()
        .filter(|i| i.provenance.created_version <= attempt.library_version)
        .filter(|i| !retrieved.iter().any(|r| r.id == i.id))
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let blocks: Vec<String> = candidates.iter().map(|i| i.prompt_block()).collect();
    let v = vars([
        ("task_description", task.description.clone()),
        (
            "discrepancies",
            serde_json::to_string_pretty(&discrepancies).expect("serializable"),
        ),
        ("insights", blocks.join("\n")),
    ]);
    let Some(matches) = ctx
        .gateway
        .complete(ids::DIAGNOSE_UNRETRIEVED, &v, CallOptions::default())
        .ok()
        .and_then(|r| parse::parse_json::<Vec<UnretrievedReply>>(&r))
    else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for m in matches {
        let id = InsightId(m.id);
        if out.iter().any(|(o, _)| *o == id) {
            continue;
        }
        let Some(insight) = candidates.iter().find(|c| c.id == id) else {
            continue;
        };
        let mut injected = retrieved.clone();
        injected.push((*insight).clone());
        let verdict = solve_injected(task, &injected, snapshot.version, 0, ctx).verdict;
        out.push((id, verdict));
    }
    out
}

/// Partitions insight–task relations for one round. Failed tasks are read
/// from their first trial: each retrieved insight is judged and ablated, and
/// missing knowledge is searched for against the anchor. Succeeded tasks
/// contribute positives for retrieved insights the judge credits.
pub fn diagnose(
    inputs: &[TaskEvidence],
    tasks: &BTreeMap<TaskId, Task>,
    snapshot: &LibrarySnapshot,
    ctx: &SolveContext,
    iteration: u32,
) -> DiagnosisRecord {
    let mut record = DiagnosisRecord::new(iteration);
    for input in inputs {
        let Some(task) = tasks.get(&input.bundle.task_id) else {
            record
                .skipped
                .push(format!("{}: task unavailable", input.bundle.task_id));
            continue;
        };
        if input.bundle.any_success {
            let Some(attempt) = input.bundle.first_success() else {
                continue;
            };
            for insight in resolve_context(snapshot, &attempt.retrieved_ids(), &[]) {
                match judge_role(task, &insight, attempt, &ctx.gateway) {
                    Some((Judgement::Positive, rationale)) => {
                        record.push(EvidenceEntry {
                            insight_id: insight.id,
                            task_id: task.id.clone(),
                            role: EvidenceRole::Positive,
                            ablation: None,
                            injection: None,
                            rationale,
                        });
                    }
                    Some(_) => {}
                    None => record.skipped.push(format!(
                        "{}: no usable judgment for insight {}",
                        task.id, insight.id
                    )),
                }
            }
            continue;
        }
        let Some(attempt) = input.bundle.attempts.first() else {
            continue;
        };
        let retrieved = resolve_context(snapshot, &attempt.retrieved_ids(), &[]);
        for insight in &retrieved {
            let judged = judge_role(task, insight, attempt, &ctx.gateway);
            let others: Vec<Insight> = retrieved
                .iter()
                .filter(|o| o.id != insight.id)
                .cloned()
                .collect();
            let ablation = solve_injected(task, &others, snapshot.version, 0, ctx).verdict;
            let rationale = judged.as_ref().map(|(_, r)| r.clone()).unwrap_or_default();
            let role = if ablation.is_success() {
                Some(EvidenceRole::Negative)
            } else if matches!(judged, Some((Judgement::Positive, _))) {
                Some(EvidenceRole::Positive)
            } else {
                None
            };
            match role {
                Some(role) => {
                    record.push(EvidenceEntry {
                        insight_id: insight.id,
                        task_id: task.id.clone(),
                        role,
                        ablation: Some(ablation),
                        injection: None,
                        rationale,
                    });
                }
                None => {
                    debug!(task = %task.id, insight = %insight.id, "pair left undiagnosed");
                    record.skipped.push(format!(
                        "{}: insight {} neither misleading nor credited",
                        task.id, insight.id
                    ));
                }
            }
        }
        let Some(anchor) = &input.anchor else {
            record
                .skipped
                .push(format!("{}: no anchor for unretrieved search", task.id));
            continue;
        };
        for (id, verdict) in find_unretrieved(task, anchor, attempt, snapshot, ctx) {
            if verdict.is_success() {
                record.push(EvidenceEntry {
                    insight_id: id,
                    task_id: task.id.clone(),
                    role: EvidenceRole::Unretrieved,
                    ablation: None,
                    injection: Some(verdict),
                    rationale: "fixes the failure when injected".into(),
                });
            }
        }
    }
    info!(
        iteration,
        entries = record.evidence.len(),
        "diagnosis complete"
    );
    record
}
