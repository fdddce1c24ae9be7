use serde::Deserialize;
use tracing::warn;

use crate::insight::{
    validate_insight, Attempt, Insight, Provenance, SupervisionMode, Task, TaxonomyPath, Track,
};
use crate::llm::{ids, parse, vars, CallOptions};
use crate::solve::{failure_evidence, SolveContext};
use crate::store::{LabelConditions, LibrarySnapshot};

/// A candidate insight together with the conditions for any labels it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposedInsight {
    pub insight: Insight,
    pub labels: LabelConditions,
}

#[derive(Debug, Deserialize)]
struct CandidateReply {
    #[serde(default)]
    track: String,
    #[serde(default)]
    level1: String,
    #[serde(default)]
    level1_condition: String,
    #[serde(default)]
    level2: String,
    #[serde(default)]
    level2_condition: String,
    #[serde(default)]
    condition: String,
    #[serde(default)]
    explanation: String,
    #[serde(default)]
    example: String,
}

fn failure_text(attempt: &Attempt, ctx: &SolveContext) -> String {
    let mut s = format!("verdict: {:?}\n", attempt.verdict);
    if let Some(ex) = &attempt.execution {
        s.push_str(&failure_evidence(ex, ctx.config.evidence_bytes));
    }
    if let Some(f) = &attempt.failure {
        s.push_str(&format!("\n{f}"));
    }
    s
}

/// The snapshot with the candidate's labels added, so a candidate naming new
/// labels can be validated before they exist.
pub(crate) fn with_labels(
    snapshot: &LibrarySnapshot,
    path: &TaxonomyPath,
    labels: &LabelConditions,
) -> LibrarySnapshot {
    let mut out = snapshot.clone();
    if out.taxonomy.level1(path.track, &path.level1).is_none() {
        let _ = out
            .taxonomy
            .add_level1(path.track, &path.level1, &labels.level1);
    }
    if out.taxonomy.resolve(path).is_none() {
        let _ = out
            .taxonomy
            .add_level2(path.track, &path.level1, &path.level2, &labels.level2);
    }
    out
}

/// One extraction call for one failed attempt. Candidates that fail
/// validation are dropped and reported by their violations.
pub fn extract_insights(
    task: &Task,
    attempt: &Attempt,
    anchor_program: &str,
    mode: SupervisionMode,
    snapshot: &LibrarySnapshot,
    ctx: &SolveContext,
    iteration: u32,
) -> (Vec<ProposedInsight>, Vec<String>) {
    let v = vars([
        ("task_description", task.description.clone()),
        ("formulation", attempt.formulation.clone()),
        ("program", attempt.program.clone()),
        ("failure", failure_text(attempt, ctx)),
        ("anchor_program", anchor_program.to_string()),
        (
            "taxonomy",
            serde_json::to_string_pretty(&snapshot.taxonomy.nodes()).expect("serializable"),
        ),
    ]);
    let mut problems = Vec::new();
    let reply = match ctx.gateway.complete(
        ids::GENERATE_INSIGHTS,
        &v,
        CallOptions::lane(attempt.trial_index),
    ) {
        Ok(r) => r,
        Err(e) => {
            problems.push(format!("extraction unavailable: {e}"));
            return (Vec::new(), problems);
        }
    };
    let Some(items) = parse::parse_json::<Vec<CandidateReply>>(&reply) else {
        warn!(task = %task.id, "unparseable extraction output");
        problems.push("unparseable extraction output".into());
        return (Vec::new(), problems);
    };
    let mut out = Vec::new();
    for item in items {
        let Ok(track) = item.track.parse::<Track>() else {
            problems.push(format!("unknown track {:?}", item.track));
            continue;
        };
        let path = TaxonomyPath::new(track, item.level1.trim(), item.level2.trim());
        let labels = LabelConditions {
            level1: item.level1_condition.trim().to_string(),
            level2: item.level2_condition.trim().to_string(),
        };
        let insight = Insight::candidate(
            path.clone(),
            item.condition.trim(),
            item.explanation.trim(),
            item.example.trim(),
            Provenance {
                source_task_id: task.id.clone(),
                supervision_mode: mode,
                created_iteration: iteration,
                created_version: 0,
                verification_context: Vec::new(),
                verification_lane: attempt.trial_index,
            },
        );
        let report = validate_insight(&insight, &with_labels(snapshot, &path, &labels));
        if !report.is_valid() {
            let reasons: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
            problems.push(format!("{path}: {}", reasons.join(", ")));
            continue;
        }
        out.push(ProposedInsight { insight, labels });
    }
    (out, problems)
}
