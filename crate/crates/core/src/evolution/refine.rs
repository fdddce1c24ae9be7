use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::insight::{EvidenceRole, Insight, InsightId, PerformanceProfile, Task};
use crate::llm::{ids, parse, vars, CallOptions, LlmGateway};
use crate::retrieval::retrieve;
use crate::solve::{solve_with, SolveContext};
use crate::store::LibrarySnapshot;

use super::EvolutionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    AddPrecondition,
    KeywordAnchor,
    MergeTriggers,
    ExclusionClause,
    Generalize,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::AddPrecondition,
        Strategy::KeywordAnchor,
        Strategy::MergeTriggers,
        Strategy::ExclusionClause,
        Strategy::Generalize,
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Strategy::ALL
            .into_iter()
            .find(|st| st.to_string().to_lowercase() == key)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// An unscored condition proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedCondition {
    pub strategy: Strategy,
    pub condition: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub kept_positives: usize,
    pub corrected_negatives: usize,
    pub recovered_unretrieved: usize,
    /// |R_i|
    pub total: usize,
}

impl ScoreCounts {
    pub fn p(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (self.kept_positives + self.corrected_negatives + self.recovered_unretrieved) as f64
            / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementCandidate {
    pub insight_id: InsightId,
    pub condition: String,
    pub strategy: Strategy,
    pub counts: ScoreCounts,
    pub p: f64,
}

/// What one replayed task showed under a candidate condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayOutcome {
    pub retrieved: bool,
    pub solved: bool,
}

fn excerpt(tasks: &[Task]) -> String {
    if tasks.is_empty() {
        return "(none)".into();
    }
    tasks
        .iter()
        .map(|t| format!("- {}: {}", t.id, t.description.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Deserialize)]
struct ProposalReply {
    #[serde(default)]
    strategy: String,
    #[serde(default)]
    condition: String,
}

/// Asks for `n` alternative conditions. Pure-positive profiles are skipped.
pub fn propose_conditions(
    insight: &Insight,
    profile: &PerformanceProfile,
    lookup: &dyn Fn(&str) -> Option<Task>,
    gateway: &LlmGateway,
    n: usize,
) -> Result<Vec<ProposedCondition>, EvolutionError> {
    if profile.evidence_set().is_empty() {
        return Err(EvolutionError::EmptyEvidenceSet(insight.id));
    }
    if profile.negative.is_empty() && profile.unretrieved.is_empty() {
        return Ok(Vec::new());
    }
    let collect = |set: &std::collections::BTreeSet<String>| -> Vec<Task> {
        set.iter().filter_map(|t| lookup(t)).collect()
    };
    let (pos, neg, unr) = (
        collect(&profile.positive),
        collect(&profile.negative),
        collect(&profile.unretrieved),
    );
    let v = vars([
        ("insight", insight.prompt_block()),
        ("positive_tasks", excerpt(&pos)),
        ("negative_tasks", excerpt(&neg)),
        ("unretrieved_tasks", excerpt(&unr)),
        ("n_candidates", n.to_string()),
    ]);
    let reply = gateway
        .complete(ids::REFINE_CONDITIONS, &v, CallOptions::default())
        .map_err(|e| EvolutionError::Unparseable(e.to_string()))?;
    let Some(items) = parse::parse_json::<Vec<ProposalReply>>(&reply) else {
        warn!(insight = %insight.id, "unparseable refinement proposals");
        return Err(EvolutionError::Unparseable("refinement proposals".into()));
    };
    Ok(items
        .into_iter()
        .filter(|i| !i.condition.trim().is_empty())
        .filter_map(|i| {
            let strategy = i.strategy.parse().ok()?;
            Some(ProposedCondition {
                strategy,
                condition: i.condition.trim().to_string(),
            })
        })
        .take(n)
        .collect())
}

/// Counts replay verdicts over R_i. Kept and recovered need retrieval and a
/// solve; corrected needs only that retrieval no longer happens.
pub fn score_counts(
    profile: &PerformanceProfile,
    mut replay: impl FnMut(&str, EvidenceRole) -> ReplayOutcome,
) -> Result<ScoreCounts, EvolutionError> {
    let r = profile.evidence_set();
    if r.is_empty() {
        return Err(EvolutionError::EmptyEvidenceSet(profile.insight_id));
    }
    let mut counts = ScoreCounts {
        total: r.len(),
        ..ScoreCounts::default()
    };
    for task in &r {
        let role = profile.role_of(task).expect("task drawn from the profile");
        let out = replay(task, role);
        match role {
            EvidenceRole::Positive if out.retrieved && out.solved => counts.kept_positives += 1,
            EvidenceRole::Negative if !out.retrieved => counts.corrected_negatives += 1,
            EvidenceRole::Unretrieved if out.retrieved && out.solved => {
                counts.recovered_unretrieved += 1
            }
            _ => {}
        }
    }
    Ok(counts)
}

pub fn score_condition(
    insight_id: InsightId,
    proposal: &ProposedCondition,
    profile: &PerformanceProfile,
    replay: impl FnMut(&str, EvidenceRole) -> ReplayOutcome,
) -> Result<RefinementCandidate, EvolutionError> {
    let counts = score_counts(profile, replay)?;
    Ok(RefinementCandidate {
        insight_id,
        condition: proposal.condition.clone(),
        strategy: proposal.strategy,
        p: counts.p(),
        counts,
    })
}

/// Retrieval (both steps) with `condition` substituted, then a lane-0 solve
/// when the role needs one.
pub fn replay_condition(
    snapshot: &LibrarySnapshot,
    insight_id: InsightId,
    condition: &str,
    task: &Task,
    role: EvidenceRole,
    ctx: &SolveContext,
) -> ReplayOutcome {
    let trial = snapshot.with_condition(insight_id, condition);
    let retrieval = retrieve(task, &trial, &ctx.gateway, &ctx.config.retrieval, 0);
    let retrieved = retrieval.contains(insight_id);
    if !retrieved || role == EvidenceRole::Negative {
        return ReplayOutcome {
            retrieved,
            solved: false,
        };
    }
    let insights: Vec<&Insight> = retrieval
        .formulation_insights
        .iter()
        .chain(&retrieval.code_insights)
        .filter_map(|id| trial.insight(*id))
        .collect();
    let attempt = solve_with(task, retrieval.clone(), &insights, trial.version, 0, ctx);
    ReplayOutcome {
        retrieved,
        solved: attempt.verdict.is_success(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RefineDecision {
    Accept {
        index: usize,
        candidate: RefinementCandidate,
    },
    NoChange,
}

/// Best candidate by p, lowest index on ties, accepted only when it beats
/// `baseline` strictly.
pub fn refine_insight(baseline: f64, candidates: &[RefinementCandidate]) -> RefineDecision {
    let mut best: Option<(usize, &RefinementCandidate)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.is_none_or(|(_, b)| c.p > b.p) {
            best = Some((i, c));
        }
    }
    match best {
        Some((index, c)) if c.p > baseline => RefineDecision::Accept {
            index,
            candidate: c.clone(),
        },
        _ => RefineDecision::NoChange,
    }
}
