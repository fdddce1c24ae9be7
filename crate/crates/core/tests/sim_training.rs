use std::collections::BTreeSet;
use std::sync::Arc;

use optinsight_core::exec::RunnerConfig;
use optinsight_core::insight::{SupervisionMode, Task};
use optinsight_core::learning::{
    audit_library, task_map, train, StopReason, TrainConfig, TrainReport,
};
use optinsight_core::llm::LlmGateway;
use optinsight_core::sim::{synthetic_corpus, SimProvider};
use optinsight_core::solve::{SolveConfig, SolveContext};
use optinsight_core::store::persist::default_seed;
use optinsight_core::store::{load, CommitPayload, LibrarySnapshot};

fn context() -> SolveContext {
    let gateway = LlmGateway::with_provider(Arc::new(SimProvider::new()));
    SolveContext::new(
        gateway,
        SolveConfig {
            runner: RunnerConfig::shell(),
            ..SolveConfig::default()
        },
    )
}

fn run(tasks: &[Task], cfg: &TrainConfig) -> (LibrarySnapshot, TrainReport) {
    train(
        tasks,
        LibrarySnapshot::with_taxonomy(default_seed()),
        &context(),
        cfg,
        None,
    )
    .unwrap()
}

#[test]
fn accuracy_climbs_then_plateaus() {
    let (snap, report) = run(&synthetic_corpus(), &TrainConfig::default());
    let solved: Vec<usize> = report.iterations.iter().map(|i| i.solved).collect();
    assert_eq!(solved, vec![3, 10, 11, 11]);
    assert_eq!(report.stop_reason, StopReason::Plateau);
    assert_eq!(
        report.final_checksum,
        optinsight_core::store::checksum(&snap)
    );
    assert!(snap.active_count() > 0);
}

#[test]
fn worker_count_does_not_change_the_library() {
    let one = run(&synthetic_corpus(), &TrainConfig::default())
        .1
        .final_checksum;
    let again = run(&synthetic_corpus(), &TrainConfig::default())
        .1
        .final_checksum;
    let four = run(
        &synthetic_corpus(),
        &TrainConfig {
            workers: 4,
            ..TrainConfig::default()
        },
    )
    .1
    .final_checksum;
    assert_eq!(one, again);
    assert_eq!(one, four);
}

#[test]
fn every_active_insight_passes_the_audit() {
    let tasks = synthetic_corpus();
    let (snap, _) = run(&tasks, &TrainConfig::default());
    let failures = audit_library(&snap, &task_map(&tasks), &context());
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn refinements_strictly_improve() {
    let (_, report) = run(&synthetic_corpus(), &TrainConfig::default());
    let mut refined = 0;
    for c in &report.commits {
        if let CommitPayload::RefineCondition {
            baseline_score,
            accepted_score,
            ..
        } = c.commit.payload
        {
            assert!(accepted_score > baseline_score);
            refined += 1;
        }
    }
    assert!(refined >= 1);
}

#[test]
fn insights_come_only_from_failed_tasks() {
    let tasks = synthetic_corpus();
    let (snap, report) = run(&tasks, &TrainConfig::default());
    for it in &report.iterations {
        let failed: BTreeSet<&str> = it
            .batches
            .iter()
            .flat_map(|b| {
                b.failed_trials
                    .iter()
                    .filter(|(_, n)| *n > 0)
                    .map(|(t, _)| t.as_str())
            })
            .collect();
        for c in &report.commits {
            if c.commit.origin.iteration != it.iteration {
                continue;
            }
            if let CommitPayload::AddInsight(i) = &c.commit.payload {
                assert!(failed.contains(i.provenance.source_task_id.as_str()));
            }
        }
    }
    for i in snap.insights.values() {
        let task = tasks
            .iter()
            .find(|t| t.id == i.provenance.source_task_id)
            .unwrap();
        let expected = if task.gold_program.is_some() {
            SupervisionMode::GoldProgram
        } else {
            SupervisionMode::AnswerOnly
        };
        assert_eq!(i.provenance.supervision_mode, expected);
    }
}

#[test]
fn archives_one_library_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let (snap, report) = train(
        &synthetic_corpus(),
        LibrarySnapshot::with_taxonomy(default_seed()),
        &context(),
        &TrainConfig::default(),
        Some(dir.path()),
    )
    .unwrap();
    for it in &report.iterations {
        let path = dir.path().join(format!("library.v{}.json", it.iteration));
        let archived = load(&path).unwrap();
        assert_eq!(optinsight_core::store::checksum(&archived), it.checksum);
    }
    assert_eq!(
        report.iterations.last().unwrap().checksum,
        optinsight_core::store::checksum(&snap)
    );
}

#[test]
fn one_iteration_when_capped() {
    let (_, report) = run(
        &synthetic_corpus(),
        &TrainConfig {
            max_iterations: 1,
            ..TrainConfig::default()
        },
    );
    assert_eq!(report.iterations.len(), 1);
    assert!(report.iterations[0].evolution.is_some());
    assert_eq!(report.stop_reason, StopReason::MaxIterations);
}

#[test]
fn empty_training_set_stops_immediately() {
    let initial = LibrarySnapshot::with_taxonomy(default_seed());
    let (snap, report) = train(
        &[],
        initial.clone(),
        &context(),
        &TrainConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(report.stop_reason, StopReason::EmptyTrainingSet);
    assert!(report.iterations.is_empty());
    assert_eq!(snap, initial);
}

#[test]
fn objective_trace_identity_holds() {
    let (_, report) = run(
        &synthetic_corpus(),
        &TrainConfig {
            lambda: 0.01,
            ..TrainConfig::default()
        },
    );
    for t in report.traces() {
        assert_eq!(t.f, t.success_rate - t.lambda * t.omega as f64);
    }
}
