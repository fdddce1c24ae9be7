//! Core domain types: taxonomy paths, insights, performance profiles, tasks
//! and solve attempts.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::exec::ExecutionResult;
use crate::retrieval::RetrievalSet;
use crate::store::LibrarySnapshot;

pub type TaskId = String;

/// Identifier assigned by the commit queue. Ids start at 1 and are never reused.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct InsightId(pub u64);

impl fmt::Display for InsightId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Track {
    DomainModeling,
    GeneralFormulation,
    CodeImplementation,
}

impl Track {
    pub const ALL: [Track; 3] = [
        Track::DomainModeling,
        Track::GeneralFormulation,
        Track::CodeImplementation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Track::DomainModeling => "DomainModeling",
            Track::GeneralFormulation => "GeneralFormulation",
            Track::CodeImplementation => "CodeImplementation",
        }
    }

    /// Code insights steer program generation; the other two tracks steer the
    /// mathematical formulation.
    pub fn is_code(self) -> bool {
        matches!(self, Track::CodeImplementation)
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Track {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "domainmodeling" => Ok(Track::DomainModeling),
            "generalformulation" => Ok(Track::GeneralFormulation),
            "codeimplementation" => Ok(Track::CodeImplementation),
            _ => Err(format!("unknown track {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaxonomyPath {
    pub track: Track,
    pub level1: String,
    pub level2: String,
}

impl TaxonomyPath {
    pub fn new(track: Track, level1: impl Into<String>, level2: impl Into<String>) -> Self {
        Self {
            track,
            level1: level1.into(),
            level2: level2.into(),
        }
    }

    /// Case-insensitive equality, the taxonomy's name-collision rule.
    pub fn same_label(&self, other: &TaxonomyPath) -> bool {
        self.track == other.track
            && self.level1.eq_ignore_ascii_case(&other.level1)
            && self.level2.eq_ignore_ascii_case(&other.level2)
    }
}

impl fmt::Display for TaxonomyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {} / {}", self.track, self.level1, self.level2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelLevel {
    L1,
    L2,
}

/// Flat view of one taxonomy label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelNode {
    pub name: String,
    pub level: LabelLevel,
    pub track: Track,
    pub condition: String,
    pub parent: Option<String>,
    pub children: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupervisionMode {
    GoldProgram,
    AnswerOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_task_id: TaskId,
    pub supervision_mode: SupervisionMode,
    pub created_iteration: u32,
    /// Snapshot version at which the insight entered the library (0 while pending).
    pub created_version: u64,
    /// Insights that were injected next to this one when it passed local
    /// verification, i.e. the retrieval context of the failed attempt.
    pub verification_context: Vec<InsightId>,
    /// Decoding lane of the failed attempt the insight was verified against.
    pub verification_lane: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionRevision {
    pub condition: String,
    pub iteration: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsightStatus {
    Active,
    Merged { into: InsightId },
    Retired,
}

/// A reusable modeling rule: taxonomy, applicability condition, explanation
/// and example, plus provenance and the append-only condition history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insight {
    pub id: InsightId,
    pub taxonomy: TaxonomyPath,
    pub condition: String,
    pub explanation: String,
    pub example: String,
    pub provenance: Provenance,
    pub condition_history: Vec<ConditionRevision>,
    pub status: InsightStatus,
    /// Insights merged into this one.
    #[serde(default)]
    pub absorbed: Vec<InsightId>,
}

impl Insight {
    /// A not-yet-committed insight. The queue assigns the id.
    pub fn candidate(
        taxonomy: TaxonomyPath,
        condition: impl Into<String>,
        explanation: impl Into<String>,
        example: impl Into<String>,
        provenance: Provenance,
    ) -> Self {
        let condition = condition.into();
        let iteration = provenance.created_iteration;
        Self {
            id: InsightId(0),
            taxonomy,
            condition_history: vec![ConditionRevision {
                condition: condition.clone(),
                iteration,
                reason: "created".into(),
            }],
            condition,
            explanation: explanation.into(),
            example: example.into(),
            provenance,
            status: InsightStatus::Active,
            absorbed: Vec::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == InsightStatus::Active
    }

    pub fn track(&self) -> Track {
        self.taxonomy.track
    }

    /// Text block used when an insight is quoted in a prompt.
    pub fn prompt_block(&self) -> String {
        let label = if self.id.0 == 0 {
            "new".to_string()
        } else {
            self.id.to_string()
        };
        format!(
            "[Insight {label}] {}\nCondition: {}\nExplanation: {}\nExample:\n{}\n",
            self.taxonomy,
            self.condition.trim(),
            self.explanation.trim(),
            self.example.trim_end()
        )
    }

    pub fn set_condition(
        &mut self,
        condition: impl Into<String>,
        iteration: u32,
        reason: impl Into<String>,
    ) {
        let condition = condition.into();
        self.condition_history.push(ConditionRevision {
            condition: condition.clone(),
            iteration,
            reason: reason.into(),
        });
        self.condition = condition;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvidenceRole {
    Positive,
    Negative,
    Unretrieved,
}

/// Per-insight partition of associated tasks into positive, negative and
/// unretrieved sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformanceProfile {
    pub insight_id: InsightId,
    pub positive: BTreeSet<TaskId>,
    pub negative: BTreeSet<TaskId>,
    pub unretrieved: BTreeSet<TaskId>,
}

impl PerformanceProfile {
    pub fn new(insight_id: InsightId) -> Self {
        Self {
            insight_id,
            ..Default::default()
        }
    }

    /// Places `task` in exactly one set; the latest evidence wins.
    pub fn assign(&mut self, task: &str, role: EvidenceRole) {
        self.positive.remove(task);
        self.negative.remove(task);
        self.unretrieved.remove(task);
        let set = match role {
            EvidenceRole::Positive => &mut self.positive,
            EvidenceRole::Negative => &mut self.negative,
            EvidenceRole::Unretrieved => &mut self.unretrieved,
        };
        set.insert(task.to_string());
    }

    pub fn role_of(&self, task: &str) -> Option<EvidenceRole> {
        if self.positive.contains(task) {
            Some(EvidenceRole::Positive)
        } else if self.negative.contains(task) {
            Some(EvidenceRole::Negative)
        } else if self.unretrieved.contains(task) {
            Some(EvidenceRole::Unretrieved)
        } else {
            None
        }
    }

    /// R_i: every task with evidence for this insight.
    pub fn evidence_set(&self) -> BTreeSet<TaskId> {
        self.positive
            .iter()
            .chain(&self.negative)
            .chain(&self.unretrieved)
            .cloned()
            .collect()
    }

    pub fn is_disjoint(&self) -> bool {
        self.positive.is_disjoint(&self.negative)
            && self.positive.is_disjoint(&self.unretrieved)
            && self.negative.is_disjoint(&self.unretrieved)
    }

    /// Union used when one insight is merged into another. A task keeps the
    /// role recorded in `self` when both sides know it.
    pub fn absorb(&mut self, other: &PerformanceProfile) {
        for (set, role) in [
            (&other.positive, EvidenceRole::Positive),
            (&other.negative, EvidenceRole::Negative),
            (&other.unretrieved, EvidenceRole::Unretrieved),
        ] {
            for task in set {
                if self.role_of(task).is_none() {
                    self.assign(task, role);
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty() && self.negative.is_empty() && self.unretrieved.is_empty()
    }
}

/// Optimal objective value kept as its decimal text and parsed on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer(String);

impl Answer {
    pub fn parse(text: &str) -> Result<Self, String> {
        let trimmed = text.trim();
        let value: f64 = trimmed
            .parse()
            .map_err(|_| format!("answer {trimmed:?} is not a decimal number"))?;
        if !value.is_finite() {
            return Err(format!("answer {trimmed:?} is not finite"));
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn value(&self) -> f64 {
        // Validated at construction.
        self.0.parse().unwrap_or(f64::NAN)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Serialize for Answer {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(deserializer)?;
        let text = match raw {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(serde::de::Error::custom(format!(
                    "answer must be a number or decimal string, got {other}"
                )))
            }
        };
        Answer::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    #[serde(rename = "source")]
    pub source_dataset: String,
    pub description: String,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_program: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_type: Option<String>,
}

impl Task {
    pub fn supervision_mode(&self) -> SupervisionMode {
        if self.gold_program.is_some() {
            SupervisionMode::GoldProgram
        } else {
            SupervisionMode::AnswerOnly
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Success,
    WrongObjective,
    RuntimeError,
    Timeout,
}

impl Verdict {
    pub fn is_success(self) -> bool {
        self == Verdict::Success
    }
}

/// One end-to-end solve trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub task_id: TaskId,
    pub trial_index: u32,
    /// Snapshot version the attempt read.
    pub library_version: u64,
    pub retrieval: RetrievalSet,
    pub formulation: String,
    pub program: String,
    pub execution: Option<ExecutionResult>,
    pub verdict: Verdict,
    pub repair_rounds_used: u32,
    /// Set when the pipeline stopped before execution (gateway failure).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Attempt {
    pub fn retrieved_ids(&self) -> Vec<InsightId> {
        let mut ids: Vec<InsightId> = self
            .retrieval
            .formulation_insights
            .iter()
            .chain(&self.retrieval.code_insights)
            .copied()
            .collect();
        ids.sort();
        ids
    }

    pub fn objective(&self) -> Option<f64> {
        self.execution.as_ref().and_then(|e| e.objective)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    EmptyLevel1,
    EmptyLevel2,
    EmptyCondition,
    EmptyExplanation,
    EmptyExample,
    UnresolvedTaxonomyPath,
    ConditionHistoryMismatch,
    DanglingMergeTarget,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::EmptyLevel1 => "level1 empty",
            Violation::EmptyLevel2 => "level2 empty",
            Violation::EmptyCondition => "condition empty",
            Violation::EmptyExplanation => "explanation empty",
            Violation::EmptyExample => "example empty",
            Violation::UnresolvedTaxonomyPath => "unresolved taxonomy path",
            Violation::ConditionHistoryMismatch => "condition differs from last history entry",
            Violation::DanglingMergeTarget => "merge target is not an active insight",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, violation: &Violation) -> bool {
        self.violations.contains(violation)
    }
}

/// Checks an insight's field invariants against `snapshot`. Never fails; an
/// empty report means the insight is valid.
pub fn validate_insight(candidate: &Insight, snapshot: &LibrarySnapshot) -> ValidationReport {
    let mut violations = Vec::new();
    let blank = |s: &str| s.trim().is_empty();
    if blank(&candidate.taxonomy.level1) {
        violations.push(Violation::EmptyLevel1);
    }
    if blank(&candidate.taxonomy.level2) {
        violations.push(Violation::EmptyLevel2);
    }
    if candidate.is_active() {
        if blank(&candidate.condition) {
            violations.push(Violation::EmptyCondition);
        }
        if blank(&candidate.explanation) {
            violations.push(Violation::EmptyExplanation);
        }
        if blank(&candidate.example) {
            violations.push(Violation::EmptyExample);
        }
        if !blank(&candidate.taxonomy.level1)
            && !blank(&candidate.taxonomy.level2)
            && snapshot.taxonomy.resolve(&candidate.taxonomy).is_none()
        {
            violations.push(Violation::UnresolvedTaxonomyPath);
        }
    }
    if candidate
        .condition_history
        .last()
        .map(|r| r.condition.as_str())
        != Some(candidate.condition.as_str())
    {
        violations.push(Violation::ConditionHistoryMismatch);
    }
    if let InsightStatus::Merged { into } = candidate.status {
        if !snapshot.insight(into).is_some_and(Insight::is_active) {
            violations.push(Violation::DanglingMergeTarget);
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Taxonomy;

    fn provenance() -> Provenance {
        Provenance {
            source_task_id: "t1".into(),
            supervision_mode: SupervisionMode::GoldProgram,
            created_iteration: 1,
            created_version: 0,
            verification_context: vec![],
            verification_lane: 0,
        }
    }

    fn snapshot_with_flow() -> LibrarySnapshot {
        let mut taxonomy = Taxonomy::default();
        taxonomy
            .add_level1(Track::DomainModeling, "Network Flow", "network problems")
            .unwrap();
        taxonomy
            .add_level2(
                Track::DomainModeling,
                "Network Flow",
                "Flow Conservation",
                "nodal balance",
            )
            .unwrap();
        LibrarySnapshot::with_taxonomy(taxonomy)
    }

    fn flow_insight() -> Insight {
        Insight::candidate(
            TaxonomyPath::new(Track::DomainModeling, "Network Flow", "Flow Conservation"),
            "Applies when flow moves through nodes.",
            "Inflow equals outflow at transshipment nodes.",
            "sum_in x = sum_out x",
            provenance(),
        )
    }

    #[test]
    fn populated_insight_is_valid() {
        let report = validate_insight(&flow_insight(), &snapshot_with_flow());
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn empty_example_is_reported() {
        let mut insight = flow_insight();
        insight.example = "  ".into();
        let report = validate_insight(&insight, &snapshot_with_flow());
        assert_eq!(report.violations, vec![Violation::EmptyExample]);
        assert_eq!(report.violations[0].to_string(), "example empty");
    }

    #[test]
    fn missing_level2_node_is_unresolved() {
        let mut insight = flow_insight();
        insight.taxonomy.level2 = "Arc-Capacity Constraints".into();
        let report = validate_insight(&insight, &snapshot_with_flow());
        assert!(report.has(&Violation::UnresolvedTaxonomyPath));
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn path_resolution_is_case_insensitive() {
        let mut insight = flow_insight();
        insight.taxonomy.level1 = "network flow".into();
        assert!(validate_insight(&insight, &snapshot_with_flow()).is_valid());
    }

    #[test]
    fn history_mismatch_detected() {
        let mut insight = flow_insight();
        insight.condition = "something else".into();
        let report = validate_insight(&insight, &snapshot_with_flow());
        assert!(report.has(&Violation::ConditionHistoryMismatch));
    }

    #[test]
    fn condition_history_is_append_only() {
        let mut insight = flow_insight();
        let before = insight.condition.clone();
        insight.set_condition("narrower", 2, "refined");
        let n = insight.condition_history.len();
        assert_eq!(insight.condition_history[n - 2].condition, before);
        assert_eq!(insight.condition_history[n - 1].condition, "narrower");
    }

    #[test]
    fn answer_rejects_non_finite() {
        assert!(Answer::parse("NaN").is_err());
        assert!(Answer::parse("inf").is_err());
        assert!(Answer::parse("abc").is_err());
        assert_eq!(Answer::parse(" 12.50 ").unwrap().as_str(), "12.50");
    }

    #[test]
    fn answer_accepts_json_number() {
        let task: Task =
            serde_json::from_str(r#"{"id":"a","source":"s","description":"d","answer":42.5}"#)
                .unwrap();
        assert_eq!(task.answer.value(), 42.5);
    }

    #[test]
    fn track_parses_loosely() {
        assert_eq!(
            "Code Implementation".parse::<Track>().unwrap(),
            Track::CodeImplementation
        );
        assert_eq!(
            "domain_modeling".parse::<Track>().unwrap(),
            Track::DomainModeling
        );
        assert!("Routing".parse::<Track>().is_err());
    }

    #[test]
    fn profile_assign_keeps_sets_disjoint() {
        let mut p = PerformanceProfile::new(InsightId(3));
        p.assign("t1", EvidenceRole::Positive);
        p.assign("t1", EvidenceRole::Negative);
        p.assign("t2", EvidenceRole::Unretrieved);
        assert!(p.is_disjoint());
        assert_eq!(p.role_of("t1"), Some(EvidenceRole::Negative));
        assert_eq!(p.evidence_set().len(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn role() -> impl Strategy<Value = EvidenceRole> {
            prop_oneof![
                Just(EvidenceRole::Positive),
                Just(EvidenceRole::Negative),
                Just(EvidenceRole::Unretrieved)
            ]
        }

        proptest! {
            #[test]
            fn assignments_stay_disjoint(ops in prop::collection::vec((0u8..12, role()), 0..60)) {
                let mut p = PerformanceProfile::new(InsightId(1));
                for (task, role) in &ops {
                    p.assign(&format!("t{task}"), *role);
                }
                prop_assert!(p.is_disjoint());
                let total = p.positive.len() + p.negative.len() + p.unretrieved.len();
                prop_assert_eq!(total, p.evidence_set().len());
            }

            #[test]
            fn insight_round_trips(cond in "[a-z ]{1,40}", expl in "[a-z ]{1,40}", iter in 0u32..9) {
                let mut i = flow_insight();
                i.set_condition(cond, iter, "prop");
                i.explanation = expl;
                let text = serde_json::to_string(&i).unwrap();
                let back: Insight = serde_json::from_str(&text).unwrap();
                prop_assert_eq!(back, i);
            }

            #[test]
            fn task_round_trips(desc in "[ -~]{1,60}", ans in -1.0e6f64..1.0e6, gold in proptest::option::of("[ -~]{1,30}")) {
                let task = Task {
                    id: "x".into(),
                    source_dataset: "s".into(),
                    description: desc,
                    answer: Answer::parse(&ans.to_string()).unwrap(),
                    gold_program: gold,
                    problem_type: None,
                };
                let text = serde_json::to_string(&task).unwrap();
                let back: Task = serde_json::from_str(&text).unwrap();
                prop_assert_eq!(back, task);
            }
        }
    }
}
