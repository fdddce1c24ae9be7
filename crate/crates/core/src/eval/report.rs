use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::evolution::{judge_role, Judgement};
use crate::insight::{InsightId, Task, TaskId, Track};
use crate::llm::LlmGateway;
use crate::store::{checksum, LibrarySnapshot};

use super::evaluate::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedPair {
    pub insight_id: InsightId,
    pub task_id: TaskId,
    pub level1: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub success: usize,
    pub failure: usize,
    pub invalid: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.success + self.failure + self.invalid
    }

    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Success => self.success += 1,
            Outcome::Failure => self.failure += 1,
            Outcome::Invalid => self.invalid += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub pairs: Vec<ClassifiedPair>,
    /// Keyed by "Track / Level1".
    pub by_level1: BTreeMap<String, OutcomeCounts>,
    pub excluded_both_success: Vec<TaskId>,
    pub unclassified: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CaseStudyError {
    #[error("task {0} lacks a paired run")]
    MissingPairedRun(TaskId),
}

/// Classifies each retrieved insight on tasks where the retrieval-on and
/// retrieval-off runs disagree or both fail. `on` and `off` must cover the
/// same tasks.
pub fn case_study_report(
    snapshot: &LibrarySnapshot,
    tasks: &[Task],
    on: &EvalReport,
    off: &EvalReport,
    gateway: &LlmGateway,
) -> Result<OutcomeReport, CaseStudyError> {
    let mut report = OutcomeReport::default();
    for task in tasks {
        let (Some(a), Some(b)) = (on.result(&task.id), off.result(&task.id)) else {
            return Err(CaseStudyError::MissingPairedRun(task.id.clone()));
        };
        let (on_ok, off_ok) = (a.verdict.is_success(), b.verdict.is_success());
        if on_ok && off_ok {
            report.excluded_both_success.push(task.id.clone());
            continue;
        }
        for id in a.attempt.retrieved_ids() {
            let Some(insight) = snapshot.resolve_active(id).or_else(|| snapshot.insight(id)) else {
                report.unclassified += 1;
                continue;
            };
            let judged = judge_role(task, insight, &a.attempt, gateway).map(|(j, _)| j);
            let outcome = match (on_ok, off_ok, judged) {
                (true, false, Some(Judgement::Positive)) => Some(Outcome::Success),
                (false, true, Some(Judgement::Negative)) => Some(Outcome::Failure),
                (false, _, _) => Some(Outcome::Invalid),
                _ => None,
            };
            let Some(outcome) = outcome else {
                report.unclassified += 1;
                continue;
            };
            let key = format!("{} / {}", insight.track(), insight.taxonomy.level1);
            report.by_level1.entry(key).or_default().add(outcome);
            report.pairs.push(ClassifiedPair {
                insight_id: insight.id,
                task_id: task.id.clone(),
                level1: insight.taxonomy.level1.clone(),
                outcome,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub label: String,
    pub count: usize,
    /// Percentage within the parent.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackShare {
    pub track: Track,
    pub count: usize,
    pub percent: f64,
    pub level1: Vec<Share>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyDistribution {
    pub total: usize,
    pub tracks: Vec<TrackShare>,
}

fn pct(part: usize, whole: usize) -> f64 {
    100.0 * part as f64 / whole as f64
}

/// Active-insight counts per track and per level-1 label, with percentages
/// relative to the parent. Only non-empty labels appear.
pub fn taxonomy_report(snapshot: &LibrarySnapshot) -> TaxonomyDistribution {
    let mut counts: BTreeMap<Track, BTreeMap<String, usize>> = BTreeMap::new();
    let mut total = 0;
    for i in snapshot.active_insights() {
        let level1 = snapshot
            .taxonomy
            .level1(i.track(), &i.taxonomy.level1)
            .map_or_else(|| i.taxonomy.level1.clone(), |l| l.name.clone());
        *counts
            .entry(i.track())
            .or_default()
            .entry(level1)
            .or_default() += 1;
        total += 1;
    }
    let tracks = Track::ALL
        .iter()
        .filter_map(|t| counts.get(t).map(|c| (*t, c)))
        .map(|(track, labels)| {
            let count: usize = labels.values().sum();
            TrackShare {
                track,
                count,
                percent: pct(count, total),
                level1: labels
                    .iter()
                    .map(|(label, &n)| Share {
                        label: label.clone(),
                        count: n,
                        percent: pct(n, count),
                    })
                    .collect(),
            }
        })
        .collect();
    TaxonomyDistribution { total, tracks }
}

/// Human-readable audit document for a library.
pub fn export_markdown(snapshot: &LibrarySnapshot) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Insight library v{}\n", snapshot.version);
    let _ = writeln!(out, "- checksum: `{}`", checksum(snapshot));
    let _ = writeln!(out, "- active insights: {}\n", snapshot.active_count());
    let dist = taxonomy_report(snapshot);
    if !dist.tracks.is_empty() {
        let _ = writeln!(out, "## Distribution\n");
        for t in &dist.tracks {
            let _ = writeln!(out, "- {} : {} ({:.1}%)", t.track, t.count, t.percent);
            for l in &t.level1 {
                let _ = writeln!(out, "  - {} : {} ({:.1}%)", l.label, l.count, l.percent);
            }
        }
        out.push('\n');
    }
    for track in &snapshot.taxonomy.tracks {
        for l1 in &track.labels {
            for l2 in &l1.children {
                let path = crate::insight::TaxonomyPath::new(track.track, &l1.name, &l2.name);
                let members = snapshot.insights_under(&path);
                if members.is_empty() {
                    continue;
                }
                let _ = writeln!(out, "## {path}\n");
                let _ = writeln!(out, "Label condition: {}\n", l2.condition);
                for i in members {
                    let _ = writeln!(out, "### Insight {}\n", i.id);
                    let _ = writeln!(out, "- condition: {}", i.condition);
                    let _ = writeln!(out, "- explanation: {}", i.explanation);
                    let _ = writeln!(
                        out,
                        "- source task: {} ({:?}, iteration {})",
                        i.provenance.source_task_id,
                        i.provenance.supervision_mode,
                        i.provenance.created_iteration
                    );
                    if !i.absorbed.is_empty() {
                        let ids: Vec<String> = i.absorbed.iter().map(|a| a.to_string()).collect();
                        let _ = writeln!(out, "- absorbed: {}", ids.join(", "));
                    }
                    let p = snapshot.profile(i.id);
                    if !p.is_empty() {
                        let _ = writeln!(
                            out,
                            "- profile: {} positive, {} negative, {} unretrieved",
                            p.positive.len(),
                            p.negative.len(),
                            p.unretrieved.len()
                        );
                    }
                    let _ = writeln!(out, "\nExample:\n\n```\n{}\n```\n", i.example.trim_end());
                    if i.condition_history.len() > 1 {
                        let _ = writeln!(out, "Condition history:\n");
                        for r in &i.condition_history {
                            let _ = writeln!(
                                out,
                                "1. (iteration {}, {}) {}",
                                r.iteration, r.reason, r.condition
                            );
                        }
                        out.push('\n');
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insight::{Insight, Provenance, SupervisionMode, TaxonomyPath};
    use crate::store::{apply_commit, Commit, CommitOrigin, CommitPayload};

    fn library(paths: &[(Track, &str, &str)]) -> LibrarySnapshot {
        let mut snap = LibrarySnapshot::default();
        for (track, l1, l2) in paths {
            let origin = CommitOrigin::default();
            if snap.taxonomy.level1(*track, l1).is_none() {
                let c = CommitPayload::AddLabel {
                    track: *track,
                    level1: l1.to_string(),
                    level2: None,
                    condition: "c".into(),
                };
                snap = apply_commit(&snap, &Commit::new(c, origin.clone()))
                    .unwrap()
                    .0;
            }
            let path = TaxonomyPath::new(*track, *l1, *l2);
            if snap.taxonomy.resolve(&path).is_none() {
                let c = CommitPayload::AddLabel {
                    track: *track,
                    level1: l1.to_string(),
                    level2: Some(l2.to_string()),
                    condition: "c".into(),
                };
                snap = apply_commit(&snap, &Commit::new(c, origin.clone()))
                    .unwrap()
                    .0;
            }
            let insight = Insight::candidate(
                path,
                "when",
                "why",
                "example",
                Provenance {
                    source_task_id: "t".into(),
                    supervision_mode: SupervisionMode::GoldProgram,
                    created_iteration: 1,
                    created_version: 0,
                    verification_context: vec![],
                    verification_lane: 0,
                },
            );
            snap = apply_commit(
                &snap,
                &Commit::new(CommitPayload::AddInsight(Box::new(insight)), origin),
            )
            .unwrap()
            .0;
        }
        snap
    }

    #[test]
    fn empty_library_has_empty_distribution() {
        assert_eq!(
            taxonomy_report(&LibrarySnapshot::default()),
            TaxonomyDistribution::default()
        );
    }

    #[test]
    fn single_insight_is_whole() {
        let d = taxonomy_report(&library(&[(Track::GeneralFormulation, "A", "a")]));
        assert_eq!(d.tracks.len(), 1);
        assert_eq!(d.tracks[0].percent, 100.0);
        assert_eq!(d.tracks[0].level1[0].percent, 100.0);
    }

    #[test]
    fn percentages_within_parent() {
        let mut layout = Vec::new();
        layout.extend(std::iter::repeat_n((Track::DomainModeling, "A", "a"), 13));
        layout.extend(std::iter::repeat_n((Track::DomainModeling, "B", "b"), 13));
        layout.extend(std::iter::repeat_n(
            (Track::GeneralFormulation, "C", "c"),
            15,
        ));
        layout.extend(std::iter::repeat_n(
            (Track::CodeImplementation, "D", "d"),
            9,
        ));
        let d = taxonomy_report(&library(&layout));
        let pcts: Vec<f64> = d.tracks.iter().map(|t| t.percent).collect();
        assert_eq!(pcts, vec![52.0, 30.0, 18.0]);
        assert_eq!(
            d.tracks[0].level1.iter().map(|s| s.percent).sum::<f64>(),
            100.0
        );
    }

    #[test]
    fn export_lists_every_active_insight() {
        let snap = library(&[
            (Track::GeneralFormulation, "A", "a"),
            (Track::CodeImplementation, "D", "d"),
        ]);
        let doc = export_markdown(&snap);
        assert!(doc.contains("### Insight 1"));
        assert!(doc.contains("### Insight 2"));
    }
}
