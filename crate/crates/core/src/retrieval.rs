//! Two-step retrieval: label matching over the taxonomy, then a per-insight
//! applicability check. Retained insights are routed by track.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::insight::{Insight, InsightId, Task, TaskId, TaxonomyPath, Track};
use crate::llm::{ids, parse, vars, CallOptions, LlmGateway};
use crate::store::LibrarySnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub enabled: bool,
    /// Insights per applicability-check call.
    pub batch_size: usize,
    pub max_formulation: usize,
    pub max_code: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            batch_size: 8,
            max_formulation: 12,
            max_code: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub insight_id: InsightId,
    pub applicable: bool,
    pub rationale: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalSet {
    pub task_id: TaskId,
    pub formulation_insights: Vec<InsightId>,
    pub code_insights: Vec<InsightId>,
    pub matched_labels: Vec<TaxonomyPath>,
    pub judgments: Vec<Judgment>,
    /// Labels named by the judge that do not exist in the taxonomy.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hallucinated_labels: Vec<String>,
}

impl RetrievalSet {
    pub fn empty(task_id: &str) -> Self {
        Self {
            task_id: task_id.to_string(),
            ..Self::default()
        }
    }

    pub fn contains(&self, id: InsightId) -> bool {
        self.formulation_insights.contains(&id) || self.code_insights.contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.formulation_insights.is_empty() && self.code_insights.is_empty()
    }
}

#[derive(Serialize)]
struct LabelEntry<'a> {
    track: Track,
    level1: &'a str,
    level1_condition: &'a str,
    level2: &'a str,
    level2_condition: &'a str,
}

/// JSON listing of every level-2 label that currently holds an active insight.
pub fn taxonomy_listing(snapshot: &LibrarySnapshot) -> Vec<TaxonomyPath> {
    snapshot
        .taxonomy
        .level2_paths()
        .into_iter()
        .filter(|p| !snapshot.insights_under(p).is_empty())
        .collect()
}

fn render_taxonomy(snapshot: &LibrarySnapshot, paths: &[TaxonomyPath]) -> String {
    let entries: Vec<LabelEntry<'_>> = paths
        .iter()
        .filter_map(|p| {
            let l1 = snapshot.taxonomy.level1(p.track, &p.level1)?;
            let l2 = snapshot.taxonomy.level2(p.track, &p.level1, &p.level2)?;
            Some(LabelEntry {
                track: p.track,
                level1: &l1.name,
                level1_condition: &l1.condition,
                level2: &l2.name,
                level2_condition: &l2.condition,
            })
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("serializable listing")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelReply {
    Object {
        track: String,
        level1: String,
        level2: String,
    },
    Text(String),
}

impl LabelReply {
    fn into_parts(self) -> Option<(String, String, String)> {
        match self {
            LabelReply::Object {
                track,
                level1,
                level2,
            } => Some((track, level1, level2)),
            LabelReply::Text(s) => {
                let parts: Vec<&str> = s.split(" / ").map(str::trim).collect();
                match parts.as_slice() {
                    [t, l1, l2] => Some((t.to_string(), l1.to_string(), l2.to_string())),
                    _ => None,
                }
            }
        }
    }
}

const RETRY_NOTE: &str = "Your previous reply could not be parsed. Reply with the JSON array only.";

/// Step one. Returns matched level-2 paths in taxonomy order, plus the names of
/// labels the judge invented.
pub fn match_labels(
    task: &Task,
    snapshot: &LibrarySnapshot,
    gateway: &LlmGateway,
    lane: u32,
) -> (Vec<TaxonomyPath>, Vec<String>) {
    let shown = taxonomy_listing(snapshot);
    if shown.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let listing = render_taxonomy(snapshot, &shown);
    let mut parsed = None;
    for note in ["", RETRY_NOTE] {
        let v = vars([
            ("task_description", task.description.clone()),
            ("taxonomy", listing.clone()),
            ("retry_note", note.to_string()),
        ]);
        let reply = match gateway.complete(ids::RETRIEVE_LABEL, &v, CallOptions::lane(lane)) {
            Ok(r) => r,
            Err(e) => {
                warn!(task = %task.id, error = %e, "label matching unavailable");
                return (Vec::new(), Vec::new());
            }
        };
        if let Some(list) = parse::parse_json::<Vec<LabelReply>>(&reply) {
            parsed = Some(list);
            break;
        }
    }
    let Some(list) = parsed else {
        warn!(task = %task.id, "label judgment unparseable after re-ask");
        return (Vec::new(), Vec::new());
    };
    let mut matched: Vec<TaxonomyPath> = Vec::new();
    let mut hallucinated = Vec::new();
    for item in list {
        let Some((track, l1, l2)) = item.into_parts() else {
            continue;
        };
        let resolved = track.parse::<Track>().ok().and_then(|t| {
            snapshot
                .taxonomy
                .resolve(&TaxonomyPath::new(t, l1.clone(), l2.clone()))
        });
        match resolved {
            Some(p) if shown.contains(&p) => {
                if !matched.contains(&p) {
                    matched.push(p);
                }
            }
            Some(_) => {}
            None => {
                let name = format!("{track} / {l1} / {l2}");
                warn!(task = %task.id, label = %name, "judge named a label that does not exist");
                hallucinated.push(name);
            }
        }
    }
    matched.sort_by_key(|p| shown.iter().position(|s| s == p));
    (matched, hallucinated)
}

#[derive(Serialize)]
struct ConditionEntry<'a> {
    id: u64,
    condition: &'a str,
}

#[derive(Deserialize)]
struct ConditionReply {
    id: u64,
    #[serde(default)]
    applicable: bool,
    #[serde(default)]
    rationale: String,
}

/// Step two. One judge call per batch of at most `batch_size` candidates;
/// insights the judge does not mention, and whole batches whose reply cannot
/// be parsed, are judged not applicable.
pub fn check_applicability(
    task: &Task,
    candidates: &[&Insight],
    gateway: &LlmGateway,
    batch_size: usize,
    lane: u32,
) -> Vec<Judgment> {
    let mut out = Vec::with_capacity(candidates.len());
    for batch in candidates.chunks(batch_size.max(1)) {
        let entries: Vec<ConditionEntry<'_>> = batch
            .iter()
            .map(|i| ConditionEntry {
                id: i.id.0,
                condition: &i.condition,
            })
            .collect();
        let v = vars([
            ("task_description", task.description.clone()),
            (
                "insights",
                serde_json::to_string_pretty(&entries).expect("serializable"),
            ),
        ]);
        let replies = match gateway.complete(ids::RETRIEVE_CONDITION, &v, CallOptions::lane(lane)) {
            Ok(text) => parse::parse_json::<Vec<ConditionReply>>(&text),
            Err(e) => {
                warn!(task = %task.id, error = %e, "applicability check unavailable");
                None
            }
        };
        if replies.is_none() {
            warn!(task = %task.id, "applicability judgment unparseable; batch marked not applicable");
        }
        for insight in batch {
            let found = replies
                .as_ref()
                .and_then(|r| r.iter().find(|x| x.id == insight.id.0));
            out.push(match found {
                Some(r) => Judgment {
                    insight_id: insight.id,
                    applicable: r.applicable,
                    rationale: r.rationale.clone(),
                },
                None => Judgment {
                    insight_id: insight.id,
                    applicable: false,
                    rationale: "no usable judgment".into(),
                },
            });
        }
    }
    out
}

/// Label matching followed by applicability checks, routed by track in
/// ascending id order and capped per route.
pub fn retrieve(
    task: &Task,
    snapshot: &LibrarySnapshot,
    gateway: &LlmGateway,
    config: &RetrievalConfig,
    lane: u32,
) -> RetrievalSet {
    let mut set = RetrievalSet::empty(&task.id);
    if !config.enabled {
        return set;
    }
    let (labels, hallucinated) = match_labels(task, snapshot, gateway, lane);
    set.hallucinated_labels = hallucinated;
    let mut candidates: Vec<&Insight> = labels
        .iter()
        .flat_map(|p| snapshot.insights_under(p))
        .collect();
    candidates.sort_by_key(|i| i.id);
    candidates.dedup_by_key(|i| i.id);
    set.matched_labels = labels;
    set.judgments = check_applicability(task, &candidates, gateway, config.batch_size, lane);
    for j in set.judgments.iter().filter(|j| j.applicable) {
        let Some(insight) = snapshot.insight(j.insight_id) else {
            continue;
        };
        if insight.track().is_code() {
            if set.code_insights.len() < config.max_code {
                set.code_insights.push(insight.id);
            }
        } else if set.formulation_insights.len() < config.max_formulation {
            set.formulation_insights.push(insight.id);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insight::{Answer, Provenance, SupervisionMode};
    use crate::llm::{CompletionRequest, FnProvider, ScriptedProvider};
    use crate::store::{apply_commit, Commit, CommitOrigin, CommitPayload, Taxonomy};
    use std::sync::Arc;

    fn task(desc: &str) -> Task {
        Task {
            id: "t".into(),
            source_dataset: "s".into(),
            description: desc.into(),
            answer: Answer::parse("1").unwrap(),
            gold_program: None,
            problem_type: None,
        }
    }

    fn library() -> LibrarySnapshot {
        let mut tax = Taxonomy::default();
        tax.add_level1(Track::DomainModeling, "Facility Location", "sites")
            .unwrap();
        tax.add_level2(
            Track::DomainModeling,
            "Facility Location",
            "Fixed Charge (Big-M Linking)",
            "open/close",
        )
        .unwrap();
        tax.add_level1(
            Track::GeneralFormulation,
            "Objective Specification",
            "objective",
        )
        .unwrap();
        tax.add_level2(
            Track::GeneralFormulation,
            "Objective Specification",
            "Sum vs. Makespan Confusion",
            "makespan",
        )
        .unwrap();
        tax.add_level1(Track::CodeImplementation, "Solver & API Syntax", "api")
            .unwrap();
        tax.add_level2(
            Track::CodeImplementation,
            "Solver & API Syntax",
            "Strict Inequalities",
            "strict",
        )
        .unwrap();
        let mut snap = LibrarySnapshot::with_taxonomy(tax);
        for path in [
            TaxonomyPath::new(
                Track::DomainModeling,
                "Facility Location",
                "Fixed Charge (Big-M Linking)",
            ),
            TaxonomyPath::new(
                Track::GeneralFormulation,
                "Objective Specification",
                "Sum vs. Makespan Confusion",
            ),
            TaxonomyPath::new(
                Track::CodeImplementation,
                "Solver & API Syntax",
                "Strict Inequalities",
            ),
        ] {
            let i = Insight::candidate(
                path,
                "cond",
                "expl",
                "ex",
                Provenance {
                    source_task_id: "s".into(),
                    supervision_mode: SupervisionMode::GoldProgram,
                    created_iteration: 0,
                    created_version: 0,
                    verification_context: vec![],
                    verification_lane: 0,
                },
            );
            snap = apply_commit(
                &snap,
                &Commit::new(
                    CommitPayload::AddInsight(Box::new(i)),
                    CommitOrigin::default(),
                ),
            )
            .unwrap()
            .0;
        }
        snap
    }

    const ALL_LABELS: &str = r#"[
        {"track":"DomainModeling","level1":"Facility Location","level2":"Fixed Charge (Big-M Linking)"},
        {"track":"GeneralFormulation","level1":"Objective Specification","level2":"Sum vs. Makespan Confusion"},
        {"track":"CodeImplementation","level1":"Solver & API Syntax","level2":"Strict Inequalities"}]"#;

    #[test]
    fn empty_library_makes_no_calls() {
        let gw = LlmGateway::with_provider(Arc::new(ScriptedProvider::new()));
        let set = retrieve(
            &task("x"),
            &LibrarySnapshot::default(),
            &gw,
            &RetrievalConfig::default(),
            0,
        );
        assert!(set.is_empty());
        assert!(gw.transcript().exchanges.is_empty());
    }

    #[test]
    fn facility_task_matches_fixed_charge_label() {
        let provider = ScriptedProvider::new().reply(
            ids::RETRIEVE_LABEL,
            r#"[{"track":"DomainModeling","level1":"facility location","level2":"Fixed Charge (Big-M Linking)"}]"#,
        );
        let gw = LlmGateway::with_provider(Arc::new(provider));
        let t = task("Service or flow through a site is allowed only if that facility is opened.");
        let (labels, bad) = match_labels(&t, &library(), &gw, 0);
        assert_eq!(
            labels,
            vec![TaxonomyPath::new(
                Track::DomainModeling,
                "Facility Location",
                "Fixed Charge (Big-M Linking)"
            )]
        );
        assert!(bad.is_empty());
    }

    #[test]
    fn invented_label_is_dropped_and_logged() {
        let provider = ScriptedProvider::new().reply(
            ids::RETRIEVE_LABEL,
            r#"[{"track":"DomainModeling","level1":"Facility Location","level2":"Hub Penalties"}]"#,
        );
        let gw = LlmGateway::with_provider(Arc::new(provider));
        let (labels, bad) = match_labels(&task("x"), &library(), &gw, 0);
        assert!(labels.is_empty());
        assert_eq!(
            bad,
            vec!["DomainModeling / Facility Location / Hub Penalties".to_string()]
        );
    }

    #[test]
    fn unparseable_label_reply_is_reasked_once() {
        let provider = ScriptedProvider::new()
            .reply(ids::RETRIEVE_LABEL, "I think the first one.")
            .reply(ids::RETRIEVE_LABEL, ALL_LABELS);
        let gw = LlmGateway::with_provider(Arc::new(provider));
        let (labels, _) = match_labels(&task("x"), &library(), &gw, 0);
        assert_eq!(labels.len(), 3);
        assert_eq!(gw.count(ids::RETRIEVE_LABEL), 2);
        let prompts = gw.transcript().exchanges;
        assert!(prompts[1].prompt.contains("could not be parsed"));
    }

    #[test]
    fn persistently_unparseable_labels_degrade_to_nothing() {
        let provider = ScriptedProvider::new().reply(ids::RETRIEVE_LABEL, "nope");
        let gw = LlmGateway::with_provider(Arc::new(provider));
        let set = retrieve(&task("x"), &library(), &gw, &RetrievalConfig::default(), 0);
        assert!(set.is_empty());
        assert_eq!(gw.count(ids::RETRIEVE_LABEL), 2);
        assert_eq!(gw.count(ids::RETRIEVE_CONDITION), 0);
    }

    #[test]
    fn all_applicable_routes_by_track() {
        let provider = ScriptedProvider::new().reply(ids::RETRIEVE_LABEL, ALL_LABELS).reply(
            ids::RETRIEVE_CONDITION,
            r#"[{"id":1,"applicable":true},{"id":2,"applicable":true},{"id":3,"applicable":true}]"#,
        );
        let gw = LlmGateway::with_provider(Arc::new(provider));
        let set = retrieve(&task("x"), &library(), &gw, &RetrievalConfig::default(), 0);
        assert_eq!(set.formulation_insights, vec![InsightId(1), InsightId(2)]);
        assert_eq!(set.code_insights, vec![InsightId(3)]);
    }

    #[test]
    fn insight_under_unmatched_label_is_excluded() {
        let provider = ScriptedProvider::new()
            .reply(
                ids::RETRIEVE_LABEL,
                r#"[{"track":"DomainModeling","level1":"Facility Location","level2":"Fixed Charge (Big-M Linking)"}]"#,
            )
            .reply(
                ids::RETRIEVE_CONDITION,
                r#"[{"id":1,"applicable":true},{"id":2,"applicable":true}]"#,
            );
        let gw = LlmGateway::with_provider(Arc::new(provider));
        let set = retrieve(&task("x"), &library(), &gw, &RetrievalConfig::default(), 0);
        assert_eq!(set.formulation_insights, vec![InsightId(1)]);
        assert!(!set.contains(InsightId(2)));
    }

    #[test]
    fn condition_batches_respect_k() {
        let lib = library();
        let all: Vec<&Insight> = lib.active_insights().collect();
        let gw = LlmGateway::with_provider(Arc::new(FnProvider(|_: &CompletionRequest| {
            Ok("garbage".into())
        })));
        let judgments = check_applicability(&task("x"), &all, &gw, 2, 0);
        assert_eq!(gw.count(ids::RETRIEVE_CONDITION), 2);
        assert!(judgments.iter().all(|j| !j.applicable));
    }

    #[test]
    fn disabled_retrieval_makes_no_calls() {
        let gw = LlmGateway::with_provider(Arc::new(ScriptedProvider::new()));
        let cfg = RetrievalConfig {
            enabled: false,
            ..RetrievalConfig::default()
        };
        assert!(retrieve(&task("x"), &library(), &gw, &cfg, 0).is_empty());
        assert!(gw.transcript().exchanges.is_empty());
    }
}
