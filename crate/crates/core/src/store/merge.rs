use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::insight::{Insight, InsightId};
use crate::llm::{ids, parse, vars, CallOptions, LlmGateway};

use super::commit::MergedText;
use super::snapshot::LibrarySnapshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergeDecision {
    Distinct,
    MergeInto {
        target: InsightId,
        merged: MergedText,
    },
}

#[derive(Debug, Deserialize)]
struct MergeReply {
    decision: String,
    #[serde(default)]
    condition: String,
    #[serde(default)]
    explanation: String,
    #[serde(default)]
    example: String,
}

/// Asks the judge whether `new_insight` duplicates an active insight filed
/// under the same level-2 label. The first insight (ascending id) the judge
/// wants to merge with is tried; the merge stands only if `verify` accepts the
/// merged text for that target. Judge failures and rejected verifications
/// both yield `Distinct`.
pub fn merge_check(
    new_insight: &Insight,
    snapshot: &LibrarySnapshot,
    gateway: &LlmGateway,
    verify: &mut dyn FnMut(InsightId, &MergedText) -> bool,
) -> MergeDecision {
    for existing in snapshot.insights_under(&new_insight.taxonomy) {
        if existing.id == new_insight.id {
            continue;
        }
        let v = vars([
            ("existing", existing.prompt_block()),
            ("candidate", new_insight.prompt_block()),
        ]);
        let reply = match gateway.complete(ids::MERGE_INSIGHTS, &v, CallOptions::default()) {
            Ok(r) => r,
            Err(e) => {
                warn!(error = %e, "merge judge unavailable, keeping insight distinct");
                return MergeDecision::Distinct;
            }
        };
        let Some(parsed) = parse::parse_json::<MergeReply>(&reply) else {
            warn!(target = %existing.id, "unparseable merge judgment, treated as distinct");
            continue;
        };
        if !parsed.decision.trim().eq_ignore_ascii_case("merge") {
            continue;
        }
        let merged = MergedText {
            condition: parsed.condition.trim().to_string(),
            explanation: parsed.explanation.trim().to_string(),
            example: parsed.example.trim().to_string(),
        };
        if [&merged.condition, &merged.explanation, &merged.example]
            .iter()
            .any(|s| s.is_empty())
        {
            warn!(target = %existing.id, "merge judgment has empty fields, treated as distinct");
            return MergeDecision::Distinct;
        }
        if verify(existing.id, &merged) {
            return MergeDecision::MergeInto {
                target: existing.id,
                merged,
            };
        }
        debug!(target = %existing.id, "merged text failed verification");
        return MergeDecision::Distinct;
    }
    MergeDecision::Distinct
}

/// The target insight with the merged text applied (condition history untouched).
pub fn merged_insight(target: &Insight, merged: &MergedText) -> Insight {
    let mut out = target.clone();
    out.condition = merged.condition.clone();
    out.explanation = merged.explanation.clone();
    out.example = merged.example.clone();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insight::{Provenance, SupervisionMode, TaxonomyPath, Track};
    use crate::llm::{ProviderError, ScriptedProvider};
    use crate::store::commit::{apply_commit, Commit, CommitOrigin, CommitPayload, MergeSource};
    use crate::store::{complexity, Taxonomy};
    use std::sync::Arc;

    fn path() -> TaxonomyPath {
        TaxonomyPath::new(
            Track::GeneralFormulation,
            "Objective Specification",
            "Makespan",
        )
    }

    fn insight(task: &str, cond: &str) -> Insight {
        Insight::candidate(
            path(),
            cond,
            "Bound every completion time by an auxiliary variable and minimise it.",
            "C_max >= C_j for all j; min C_max",
            Provenance {
                source_task_id: task.into(),
                supervision_mode: SupervisionMode::GoldProgram,
                created_iteration: 1,
                created_version: 0,
                verification_context: vec![],
                verification_lane: 0,
            },
        )
    }

    fn library_with_one() -> LibrarySnapshot {
        let mut tax = Taxonomy::default();
        tax.add_level1(
            Track::GeneralFormulation,
            "Objective Specification",
            "objective wording",
        )
        .unwrap();
        tax.add_level2(
            Track::GeneralFormulation,
            "Objective Specification",
            "Makespan",
            "last finish time",
        )
        .unwrap();
        let base = LibrarySnapshot::with_taxonomy(tax);
        let commit = Commit::new(
            CommitPayload::AddInsight(Box::new(insight("t1", "makespan objectives"))),
            CommitOrigin::default(),
        );
        apply_commit(&base, &commit).unwrap().0
    }

    const MERGE: &str = r#"{"decision":"merge","condition":"makespan or latest finish","explanation":"e","example":"x"}"#;

    #[test]
    fn empty_bucket_is_distinct_without_calls() {
        let gw = LlmGateway::with_provider(Arc::new(ScriptedProvider::new()));
        let mut tax = Taxonomy::default();
        tax.add_level1(Track::GeneralFormulation, "Objective Specification", "c")
            .unwrap();
        tax.add_level2(
            Track::GeneralFormulation,
            "Objective Specification",
            "Makespan",
            "c",
        )
        .unwrap();
        let snap = LibrarySnapshot::with_taxonomy(tax);
        let d = merge_check(&insight("t2", "c"), &snap, &gw, &mut |_, _| true);
        assert_eq!(d, MergeDecision::Distinct);
        assert_eq!(gw.transcript().exchanges.len(), 0);
    }

    #[test]
    fn verified_duplicate_merges_and_keeps_omega() {
        let snap = library_with_one();
        let gw = LlmGateway::with_provider(Arc::new(
            ScriptedProvider::new().reply(ids::MERGE_INSIGHTS, MERGE),
        ));
        let candidate = insight("t2", "latest finish");
        let d = merge_check(&candidate, &snap, &gw, &mut |_, _| true);
        let MergeDecision::MergeInto { target, merged } = d else {
            panic!("expected merge");
        };
        assert_eq!(target, InsightId(1));
        let before = complexity(&snap);
        let commit = Commit::new(
            CommitPayload::MergeInsights {
                target,
                source: MergeSource::New(Box::new(candidate)),
                merged,
                iteration: 1,
            },
            CommitOrigin::default(),
        );
        let (after, _) = apply_commit(&snap, &commit).unwrap();
        assert_eq!(complexity(&after), before);
        assert_eq!(
            after.insights.values().filter(|i| !i.is_active()).count(),
            1
        );
        assert_eq!(
            after.source_tasks(InsightId(1)),
            vec!["t1".to_string(), "t2".to_string()]
        );
    }

    #[test]
    fn failed_verification_degrades_to_distinct() {
        let snap = library_with_one();
        let gw = LlmGateway::with_provider(Arc::new(
            ScriptedProvider::new().reply(ids::MERGE_INSIGHTS, MERGE),
        ));
        let d = merge_check(&insight("t2", "latest finish"), &snap, &gw, &mut |_, _| {
            false
        });
        assert_eq!(d, MergeDecision::Distinct);
    }

    #[test]
    fn judge_failure_is_fail_open() {
        let snap = library_with_one();
        let provider =
            ScriptedProvider::new().fail(ids::MERGE_INSIGHTS, ProviderError::Fatal("down".into()));
        let gw = LlmGateway::with_provider(Arc::new(provider));
        let d = merge_check(&insight("t2", "x"), &snap, &gw, &mut |_, _| true);
        assert_eq!(d, MergeDecision::Distinct);
    }

    #[test]
    fn existing_merge_lowers_omega_by_one() {
        let snap = library_with_one();
        let commit = Commit::new(
            CommitPayload::AddInsight(Box::new(insight("t2", "latest finish"))),
            CommitOrigin::default(),
        );
        let (snap, _) = apply_commit(&snap, &commit).unwrap();
        let before = complexity(&snap);
        let merge = Commit::new(
            CommitPayload::MergeInsights {
                target: InsightId(1),
                source: MergeSource::Existing(InsightId(2)),
                merged: MergedText {
                    condition: "c".into(),
                    explanation: "e".into(),
                    example: "x".into(),
                },
                iteration: 1,
            },
            CommitOrigin::default(),
        );
        let (after, _) = apply_commit(&snap, &merge).unwrap();
        assert_eq!(complexity(&after), before - 1);
        assert_eq!(after.resolve_active(InsightId(2)).unwrap().id, InsightId(1));
    }
}
