use tracing::debug;

use crate::insight::{Insight, InsightId, Task};
use crate::solve::{solve_injected, SolveContext};
use crate::store::{merged_insight, LibrarySnapshot, MergedText};

use super::TaskMap;

/// Current active versions of `ids`, deduplicated, skipping `exclude` and
/// anything that no longer resolves.
pub fn resolve_context(
    snapshot: &LibrarySnapshot,
    ids: &[InsightId],
    exclude: &[InsightId],
) -> Vec<Insight> {
    let mut out: Vec<Insight> = Vec::new();
    for id in ids {
        let Some(i) = snapshot.resolve_active(*id) else {
            continue;
        };
        if exclude.contains(&i.id) || out.iter().any(|o| o.id == i.id) {
            continue;
        }
        out.push(i.clone());
    }
    out
}

/// Re-solves `task` with the context insights and `candidate` injected.
pub fn local_verify(
    candidate: &Insight,
    task: &Task,
    context: &[Insight],
    library_version: u64,
    lane: u32,
    ctx: &SolveContext,
) -> bool {
    let mut injected = context.to_vec();
    injected.push(candidate.clone());
    let attempt = solve_injected(task, &injected, library_version, lane, ctx);
    debug!(task = %task.id, verdict = ?attempt.verdict, "local verification");
    attempt.verdict.is_success()
}

/// Verifies a merge: the merged text must solve the source task of every
/// constituent (the target, everything it absorbed, and `extra`), each under
/// the context and lane it was originally verified with.
pub fn verify_merged(
    target: InsightId,
    merged: &MergedText,
    extra: &[&Insight],
    snapshot: &LibrarySnapshot,
    tasks: &TaskMap,
    ctx: &SolveContext,
) -> bool {
    let Some(target_insight) = snapshot.insight(target) else {
        return false;
    };
    let candidate = merged_insight(target_insight, merged);
    let mut constituents: Vec<&Insight> = vec![target_insight];
    let mut stack = target_insight.absorbed.clone();
    while let Some(id) = stack.pop() {
        if let Some(i) = snapshot.insight(id) {
            constituents.push(i);
            stack.extend(i.absorbed.iter().copied());
        }
    }
    constituents.extend(extra.iter().copied());
    let exclude: Vec<InsightId> = constituents.iter().map(|c| c.id).chain([target]).collect();
    constituents.iter().all(|c| {
        let Some(task) = tasks.get(&c.provenance.source_task_id) else {
            debug!(task = %c.provenance.source_task_id, "source task unavailable for merge verification");
            return false;
        };
        let context = resolve_context(snapshot, &c.provenance.verification_context, &exclude);
        local_verify(&candidate, task, &context, snapshot.version, c.provenance.verification_lane, ctx)
    })
}
