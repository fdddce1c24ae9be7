use std::sync::Arc;

use optinsight_core::exec::RunnerConfig;
use optinsight_core::insight::Task;
use optinsight_core::learning::{
    learn_batch, process_task, render_history, run_trials, self_explore, task_map, TrainConfig,
};
use optinsight_core::llm::{ids, LlmGateway};
use optinsight_core::sim::{synthetic_corpus, SimOptions, SimProvider, DECOY_LEVEL2};
use optinsight_core::solve::{SolveConfig, SolveContext};
use optinsight_core::store::persist::default_seed;
use optinsight_core::store::{CommitPayload, CommitQueue, LibrarySnapshot};

fn context_with(options: SimOptions) -> SolveContext {
    SolveContext::new(
        LlmGateway::with_provider(Arc::new(SimProvider::with_options(options))),
        SolveConfig {
            runner: RunnerConfig::shell(),
            ..SolveConfig::default()
        },
    )
}

fn context() -> SolveContext {
    context_with(SimOptions::default())
}

fn task(id: &str) -> Task {
    synthetic_corpus().into_iter().find(|t| t.id == id).unwrap()
}

fn seeded() -> LibrarySnapshot {
    LibrarySnapshot::with_taxonomy(default_seed())
}

#[test]
fn stochastic_success_still_feeds_extraction() {
    let ctx = context();
    let t = task("T08");
    let bundle = run_trials(&t, &seeded(), &ctx, 3);
    assert_eq!(bundle.attempts.len(), 3);
    assert!(bundle.any_success);
    assert_eq!(bundle.failed().count(), 2);

    let ctx = context();
    let tasks = task_map(&synthetic_corpus());
    let outcome = process_task(&t, &seeded(), &ctx, &tasks, &TrainConfig::default(), 1, 0);
    assert_eq!(ctx.gateway.count(ids::GENERATE_INSIGHTS), 2);
    assert!(outcome
        .commits
        .iter()
        .any(|c| matches!(c.payload, CommitPayload::AddInsight(_))));
}

#[test]
fn all_success_produces_no_commits() {
    let ctx = context();
    let q = CommitQueue::start(seeded());
    let tasks = task_map(&synthetic_corpus());
    let (report, _) = learn_batch(
        &[task("T10")],
        &q,
        &ctx,
        &tasks,
        &TrainConfig::default(),
        1,
        0,
    )
    .unwrap();
    assert_eq!(report.successes, vec!["T10".to_string()]);
    assert_eq!(q.applied_count(), 0);
    assert_eq!(ctx.gateway.count(ids::GENERATE_INSIGHTS), 0);
}

#[test]
fn earlier_commit_fixes_a_later_task_in_the_same_batch() {
    for workers in [1, 2] {
        let ctx = context();
        let q = CommitQueue::start(seeded());
        let tasks = task_map(&synthetic_corpus());
        let cfg = TrainConfig {
            workers,
            ..TrainConfig::default()
        };
        let (report, _) =
            learn_batch(&[task("T06"), task("T12")], &q, &ctx, &tasks, &cfg, 1, 0).unwrap();
        assert_eq!(report.failures, vec!["T06".to_string()]);
        assert_eq!(report.successes, vec!["T12".to_string()]);
        assert_eq!(report.added.len(), 1);
        assert_eq!(q.snapshot().active_count(), 1);
    }
}

#[test]
fn answer_only_task_explores_without_seeing_the_answer() {
    let ctx = context();
    let t = task("T02");
    let bundle = run_trials(&t, &seeded(), &ctx, 3);
    assert!(!bundle.any_success);
    let failed: Vec<_> = bundle.failed().collect();
    let history = render_history(&failed, &[]);
    assert!(!history.contains(t.answer.as_str()));
    let state = self_explore(&t, &failed, &ctx, 5, 0.7);
    let reference = state
        .reference_program
        .expect("exploration verifies a program");
    let last = state.history.last().unwrap();
    assert!(last.verdict.is_success());
    assert_eq!(last.program, reference);
    assert!(state.budget_remaining < 5);
    for exchange in ctx
        .gateway
        .transcript()
        .exchanges
        .iter()
        .filter(|e| e.template_id == ids::SELF_EXPLORE)
    {
        assert!(!exchange.prompt.is_empty());
        assert!(!exchange.prompt.contains("=30"));
    }
}

#[test]
fn unlearnable_failure_commits_nothing() {
    let ctx = context();
    let tasks = task_map(&synthetic_corpus());
    let outcome = process_task(
        &task("T09"),
        &seeded(),
        &ctx,
        &tasks,
        &TrainConfig::default(),
        1,
        0,
    );
    assert!(!outcome.bundle.any_success);
    assert!(outcome.anchor.is_none());
    assert!(outcome.commits.is_empty());
    assert!(!outcome.notes.is_empty());
}

#[test]
fn decoy_candidates_never_reach_the_library() {
    let ctx = context_with(SimOptions {
        decoy_insights: true,
    });
    let q = CommitQueue::start(seeded());
    let corpus = synthetic_corpus();
    let tasks = task_map(&corpus);
    let (report, _) = learn_batch(
        &corpus[..8],
        &q,
        &ctx,
        &tasks,
        &TrainConfig::default(),
        1,
        0,
    )
    .unwrap();
    assert!(report
        .rejections
        .iter()
        .any(|r| r.label.contains(DECOY_LEVEL2) && r.reason == "local verification failed"));
    let snap = q.snapshot();
    assert!(snap
        .insights
        .values()
        .all(|i| i.taxonomy.level2 != DECOY_LEVEL2));
}
