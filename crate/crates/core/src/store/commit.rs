use std::fmt;

use serde::{Deserialize, Serialize};

use crate::insight::{
    validate_insight, EvidenceRole, Insight, InsightId, InsightStatus, TaskId, Track, Violation,
};

use super::snapshot::LibrarySnapshot;
use super::taxonomy::TaxonomyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommitKind {
    AddInsight,
    MergeInsights,
    RefineCondition,
    AddLabel,
    RetireInsight,
    UpdateProfile,
}

/// The constituent being folded into a merge target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergeSource {
    /// A library insight; it becomes `Merged` and Ω drops by one.
    Existing(InsightId),
    /// A fresh candidate; it is recorded as `Merged` so Ω is unchanged.
    New(Box<Insight>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedText {
    pub condition: String,
    pub explanation: String,
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CommitPayload {
    AddInsight(Box<Insight>),
    MergeInsights {
        target: InsightId,
        source: MergeSource,
        merged: MergedText,
        iteration: u32,
    },
    RefineCondition {
        insight: InsightId,
        condition: String,
        iteration: u32,
        reason: String,
        baseline_score: f64,
        accepted_score: f64,
    },
    /// Adds an L1 label (`level2` absent) or an L2 label under an existing L1.
    AddLabel {
        track: Track,
        level1: String,
        level2: Option<String>,
        condition: String,
    },
    RetireInsight {
        insight: InsightId,
        reason: String,
    },
    UpdateProfile {
        insight: InsightId,
        task: TaskId,
        role: EvidenceRole,
    },
}

impl CommitPayload {
    pub fn kind(&self) -> CommitKind {
        match self {
            CommitPayload::AddInsight(_) => CommitKind::AddInsight,
            CommitPayload::MergeInsights { .. } => CommitKind::MergeInsights,
            CommitPayload::RefineCondition { .. } => CommitKind::RefineCondition,
            CommitPayload::AddLabel { .. } => CommitKind::AddLabel,
            CommitPayload::RetireInsight { .. } => CommitKind::RetireInsight,
            CommitPayload::UpdateProfile { .. } => CommitKind::UpdateProfile,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitOrigin {
    pub worker_id: usize,
    pub task_id: Option<TaskId>,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub payload: CommitPayload,
    pub origin: CommitOrigin,
}

impl Commit {
    pub fn new(payload: CommitPayload, origin: CommitOrigin) -> Self {
        Self { payload, origin }
    }

    pub fn kind(&self) -> CommitKind {
        self.payload.kind()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum Rejection {
    #[error("unresolved taxonomy path")]
    UnresolvedTaxonomyPath,
    #[error("invalid insight: {0}")]
    InvalidInsight(String),
    #[error("unknown insight {0}")]
    UnknownInsight(InsightId),
    #[error("insight {0} is not active")]
    InactiveInsight(InsightId),
    #[error("label {0:?} already exists")]
    LabelExists(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("refinement does not improve the score ({accepted} <= {baseline})")]
    NonImprovingRefinement { baseline: f64, accepted: f64 },
    #[error("cannot merge an insight into itself")]
    SelfMerge,
}

/// What an applied commit produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitReceipt {
    pub version: u64,
    pub assigned_id: Option<InsightId>,
}

impl fmt::Display for CommitReceipt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.assigned_id {
            Some(id) => write!(f, "v{} (insight {id})", self.version),
            None => write!(f, "v{}", self.version),
        }
    }
}

fn active(s: &LibrarySnapshot, id: InsightId) -> Result<&Insight, Rejection> {
    let insight = s.insight(id).ok_or(Rejection::UnknownInsight(id))?;
    if !insight.is_active() {
        return Err(Rejection::InactiveInsight(id));
    }
    Ok(insight)
}

/// Applies one commit to a snapshot. Pure and deterministic: the same
/// (snapshot, commit) pair always yields the same result. A successful
/// application bumps the version by exactly one.
pub fn apply_commit(
    snapshot: &LibrarySnapshot,
    commit: &Commit,
) -> Result<(LibrarySnapshot, CommitReceipt), Rejection> {
    let mut next = snapshot.clone();
    next.version = snapshot.version + 1;
    let mut assigned_id = None;

    match &commit.payload {
        CommitPayload::AddInsight(candidate) => {
            let mut insight = (**candidate).clone();
            insight.status = InsightStatus::Active;
            insight.taxonomy = snapshot
                .taxonomy
                .resolve(&insight.taxonomy)
                .ok_or(Rejection::UnresolvedTaxonomyPath)?;
            let report = validate_insight(&insight, snapshot);
            if !report.is_valid() {
                return Err(if report.has(&Violation::UnresolvedTaxonomyPath) {
                    Rejection::UnresolvedTaxonomyPath
                } else {
                    Rejection::InvalidInsight(
                        report
                            .violations
                            .iter()
                            .map(ToString::to_string)
                            .collect::<Vec<_>>()
                            .join(", "),
                    )
                });
            }
            let id = snapshot.next_id();
            insight.id = id;
            insight.provenance.created_version = next.version;
            next.insights.insert(id, insight);
            assigned_id = Some(id);
        }
        CommitPayload::MergeInsights {
            target,
            source,
            merged,
            iteration,
        } => {
            active(snapshot, *target)?;
            if [&merged.condition, &merged.explanation, &merged.example]
                .iter()
                .any(|s| s.trim().is_empty())
            {
                return Err(Rejection::InvalidInsight(
                    "merged text has an empty field".into(),
                ));
            }
            let source_id = match source {
                MergeSource::Existing(id) => {
                    if id == target {
                        return Err(Rejection::SelfMerge);
                    }
                    active(snapshot, *id)?;
                    let absorbed = next.insights.get_mut(id).expect("checked above");
                    absorbed.status = InsightStatus::Merged { into: *target };
                    *id
                }
                MergeSource::New(candidate) => {
                    let mut insight = (**candidate).clone();
                    insight.taxonomy = snapshot
                        .taxonomy
                        .resolve(&insight.taxonomy)
                        .ok_or(Rejection::UnresolvedTaxonomyPath)?;
                    let id = snapshot.next_id();
                    insight.id = id;
                    insight.provenance.created_version = next.version;
                    insight.status = InsightStatus::Merged { into: *target };
                    next.insights.insert(id, insight);
                    assigned_id = Some(id);
                    id
                }
            };
            let absorbed_profile = next.profiles.remove(&source_id);
            let t = next.insights.get_mut(target).expect("checked above");
            if t.condition != merged.condition {
                t.set_condition(
                    merged.condition.clone(),
                    *iteration,
                    format!("merged insight {source_id}"),
                );
            }
            t.explanation = merged.explanation.clone();
            t.example = merged.example.clone();
            t.absorbed.push(source_id);
            if let Some(p) = absorbed_profile {
                next.profiles
                    .entry(*target)
                    .or_insert_with(|| crate::insight::PerformanceProfile::new(*target))
                    .absorb(&p);
            }
        }
        CommitPayload::RefineCondition {
            insight,
            condition,
            iteration,
            reason,
            baseline_score,
            accepted_score,
        } => {
            active(snapshot, *insight)?;
            if accepted_score.partial_cmp(baseline_score) != Some(std::cmp::Ordering::Greater) {
                return Err(Rejection::NonImprovingRefinement {
                    baseline: *baseline_score,
                    accepted: *accepted_score,
                });
            }
            if condition.trim().is_empty() {
                return Err(Rejection::InvalidInsight("condition empty".into()));
            }
            next.insights
                .get_mut(insight)
                .expect("checked above")
                .set_condition(condition.clone(), *iteration, reason.clone());
        }
        CommitPayload::AddLabel {
            track,
            level1,
            level2,
            condition,
        } => {
            let result = match level2 {
                None => next.taxonomy.add_level1(*track, level1, condition),
                Some(l2) => next.taxonomy.add_level2(*track, level1, l2, condition),
            };
            result.map_err(|e| match e {
                TaxonomyError::Exists(name) => Rejection::LabelExists(name),
                other => Rejection::InvalidLabel(other.to_string()),
            })?;
        }
        CommitPayload::RetireInsight { insight, .. } => {
            active(snapshot, *insight)?;
            next.insights
                .get_mut(insight)
                .expect("checked above")
                .status = InsightStatus::Retired;
        }
        CommitPayload::UpdateProfile {
            insight,
            task,
            role,
        } => {
            if snapshot.insight(*insight).is_none() {
                return Err(Rejection::UnknownInsight(*insight));
            }
            next.profiles
                .entry(*insight)
                .or_insert_with(|| crate::insight::PerformanceProfile::new(*insight))
                .assign(task, *role);
        }
    }

    Ok((
        next,
        CommitReceipt {
            version: snapshot.version + 1,
            assigned_id,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insight::{EvidenceRole, Provenance, SupervisionMode, TaxonomyPath, Track};
    use crate::store::Taxonomy;

    fn path() -> TaxonomyPath {
        TaxonomyPath::new(Track::DomainModeling, "Facility Location", "Fixed Charge")
    }

    fn base() -> LibrarySnapshot {
        let mut tax = Taxonomy::default();
        tax.add_level1(Track::DomainModeling, "Facility Location", "sites")
            .unwrap();
        tax.add_level2(
            Track::DomainModeling,
            "Facility Location",
            "Fixed Charge",
            "opening costs",
        )
        .unwrap();
        LibrarySnapshot::with_taxonomy(tax)
    }

    fn candidate(task: &str) -> Insight {
        Insight::candidate(
            path(),
            "Applies when opening a site costs money.",
            "Link flow to the open decision with a big-M bound.",
            "x_ij <= M * y_i",
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

    fn add(s: &LibrarySnapshot, task: &str) -> (LibrarySnapshot, CommitReceipt) {
        apply_commit(
            s,
            &Commit::new(
                CommitPayload::AddInsight(Box::new(candidate(task))),
                CommitOrigin::default(),
            ),
        )
        .unwrap()
    }

    fn refine(id: u64, baseline: f64, accepted: f64) -> Commit {
        Commit::new(
            CommitPayload::RefineCondition {
                insight: InsightId(id),
                condition: "Applies when a site must be opened before use.".into(),
                iteration: 2,
                reason: "test".into(),
                baseline_score: baseline,
                accepted_score: accepted,
            },
            CommitOrigin::default(),
        )
    }

    #[test]
    fn add_assigns_sequential_ids_and_versions() {
        let (s1, r1) = add(&base(), "t1");
        let (s2, r2) = add(&s1, "t2");
        assert_eq!((r1.version, r1.assigned_id), (1, Some(InsightId(1))));
        assert_eq!((r2.version, r2.assigned_id), (2, Some(InsightId(2))));
        assert_eq!(
            s2.insight(InsightId(2)).unwrap().provenance.created_version,
            2
        );
    }

    #[test]
    fn application_is_pure() {
        let b = base();
        let c = Commit::new(
            CommitPayload::AddInsight(Box::new(candidate("t1"))),
            CommitOrigin::default(),
        );
        assert_eq!(apply_commit(&b, &c).unwrap(), apply_commit(&b, &c).unwrap());
        assert_eq!(b.version, 0);
    }

    #[test]
    fn unresolved_label_is_rejected() {
        let mut c = candidate("t1");
        c.taxonomy = TaxonomyPath::new(Track::DomainModeling, "Facility Location", "Nowhere");
        let err = apply_commit(
            &base(),
            &Commit::new(
                CommitPayload::AddInsight(Box::new(c)),
                CommitOrigin::default(),
            ),
        );
        assert_eq!(err.unwrap_err(), Rejection::UnresolvedTaxonomyPath);
    }

    #[test]
    fn refinement_must_strictly_improve() {
        let (s, _) = add(&base(), "t1");
        assert!(matches!(
            apply_commit(&s, &refine(1, 0.5, 0.5)),
            Err(Rejection::NonImprovingRefinement { .. })
        ));
        assert!(apply_commit(&s, &refine(1, 0.5, f64::NAN)).is_err());
        let (next, _) = apply_commit(&s, &refine(1, 0.5, 0.75)).unwrap();
        let i = next.insight(InsightId(1)).unwrap();
        assert_eq!(i.condition_history.len(), 2);
        assert_eq!(
            i.condition,
            "Applies when a site must be opened before use."
        );
    }

    #[test]
    fn existing_merge_retires_source_and_moves_profile() {
        let (s, _) = add(&base(), "t1");
        let (s, _) = add(&s, "t2");
        let profile = Commit::new(
            CommitPayload::UpdateProfile {
                insight: InsightId(2),
                task: "t9".into(),
                role: EvidenceRole::Negative,
            },
            CommitOrigin::default(),
        );
        let (s, _) = apply_commit(&s, &profile).unwrap();
        let merge = Commit::new(
            CommitPayload::MergeInsights {
                target: InsightId(1),
                source: MergeSource::Existing(InsightId(2)),
                merged: MergedText {
                    condition: "Applies when opening a site costs money.".into(),
                    explanation: "e".into(),
                    example: "x".into(),
                },
                iteration: 1,
            },
            CommitOrigin::default(),
        );
        let (after, _) = apply_commit(&s, &merge).unwrap();
        assert_eq!(after.active_count(), s.active_count() - 1);
        assert_eq!(after.resolve_active(InsightId(2)).unwrap().id, InsightId(1));
        assert!(after.profile(InsightId(1)).negative.contains("t9"));
        assert_eq!(
            after.source_tasks(InsightId(1)),
            vec!["t1".to_string(), "t2".to_string()]
        );
    }

    #[test]
    fn self_merge_is_rejected() {
        let (s, _) = add(&base(), "t1");
        let merge = Commit::new(
            CommitPayload::MergeInsights {
                target: InsightId(1),
                source: MergeSource::Existing(InsightId(1)),
                merged: MergedText {
                    condition: "c".into(),
                    explanation: "e".into(),
                    example: "x".into(),
                },
                iteration: 1,
            },
            CommitOrigin::default(),
        );
        assert_eq!(apply_commit(&s, &merge).unwrap_err(), Rejection::SelfMerge);
    }

    #[test]
    fn retired_insights_reject_further_edits() {
        let (s, _) = add(&base(), "t1");
        let retire = Commit::new(
            CommitPayload::RetireInsight {
                insight: InsightId(1),
                reason: "obsolete".into(),
            },
            CommitOrigin::default(),
        );
        let (s, _) = apply_commit(&s, &retire).unwrap();
        assert_eq!(s.active_count(), 0);
        assert_eq!(
            apply_commit(&s, &refine(1, 0.0, 1.0)).unwrap_err(),
            Rejection::InactiveInsight(InsightId(1))
        );
    }

    #[test]
    fn duplicate_label_is_rejected() {
        let c = Commit::new(
            CommitPayload::AddLabel {
                track: Track::DomainModeling,
                level1: "facility location".into(),
                level2: None,
                condition: "c".into(),
            },
            CommitOrigin::default(),
        );
        assert!(matches!(
            apply_commit(&base(), &c),
            Err(Rejection::LabelExists(_))
        ));
    }
}
