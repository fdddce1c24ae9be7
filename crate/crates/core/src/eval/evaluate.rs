use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::exec::Tolerance;
use crate::insight::{Attempt, Task, TaskId, Verdict};
use crate::llm::ProviderKind;
use crate::solve::{solve_task, SolveContext};
use crate::store::{checksum, LibrarySnapshot};

/// Settings a report's numbers depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub library_checksum: String,
    pub library_version: u64,
    pub tolerance: Tolerance,
    pub provider: ProviderKind,
    pub retrieval: bool,
    pub self_debug: bool,
}

impl Fingerprint {
    pub fn of(snapshot: &LibrarySnapshot, ctx: &SolveContext) -> Self {
        Self {
            library_checksum: checksum(snapshot),
            library_version: snapshot.version,
            tolerance: ctx.config.tolerance,
            provider: ctx.gateway.provider_kind(),
            retrieval: ctx.config.retrieval.enabled,
            self_debug: ctx.config.self_debug,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: TaskId,
    pub dataset: String,
    pub verdict: Verdict,
    pub attempt: Attempt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub name: String,
    pub solved: usize,
    pub total: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: Fingerprint,
    pub datasets: Vec<DatasetScore>,
    /// Total successes over total tasks; `None` with no tasks.
    pub micro: Option<f64>,
    /// Unweighted mean of the per-dataset rates; `None` with no datasets.
    #[serde(rename = "macro")]
    pub macro_avg: Option<f64>,
    /// Datasets entering both averages.
    pub population: Vec<String>,
    pub tasks: Vec<TaskResult>,
}

impl EvalReport {
    pub fn solved(&self) -> usize {
        self.datasets.iter().map(|d| d.solved).sum()
    }

    pub fn total(&self) -> usize {
        self.datasets.iter().map(|d| d.total).sum()
    }

    pub fn result(&self, task: &str) -> Option<&TaskResult> {
        self.tasks.iter().find(|t| t.task_id == task)
    }
}

/// Per-dataset scores and the micro and macro averages, datasets in name order.
pub fn aggregate(results: &[(String, Verdict)]) -> (Vec<DatasetScore>, Option<f64>, Option<f64>) {
    let mut by: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (dataset, verdict) in results {
        let e = by.entry(dataset.as_str()).or_default();
        e.1 += 1;
        if verdict.is_success() {
            e.0 += 1;
        }
    }
    let datasets: Vec<DatasetScore> = by
        .into_iter()
        .map(|(name, (solved, total))| DatasetScore {
            name: name.to_string(),
            solved,
            total,
            rate: (total > 0).then(|| solved as f64 / total as f64),
        })
        .collect();
    let solved: usize = datasets.iter().map(|d| d.solved).sum();
    let total: usize = datasets.iter().map(|d| d.total).sum();
    let micro = (total > 0).then(|| solved as f64 / total as f64);
    let rates: Vec<f64> = datasets.iter().filter_map(|d| d.rate).collect();
    let macro_avg = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
    (datasets, micro, macro_avg)
}

/// One solve per task (lane 0, no trials, no learning). Tasks run on up to
/// `workers` threads; transcripts are absorbed in task order.
pub fn evaluate(
    snapshot: &LibrarySnapshot,
    tasks: &[Task],
    ctx: &SolveContext,
    workers: usize,
) -> EvalReport {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(Attempt, SolveContext)>>> = Mutex::new(vec![None; tasks.len()]);
    let workers = workers.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let fork = ctx.fork();
                let attempt = solve_task(task, snapshot, &fork, 0);
                slots.lock().unwrap()[i] = Some((attempt, fork));
            });
        }
    });
    let mut results = Vec::with_capacity(tasks.len());
    for (task, slot) in tasks.iter().zip(slots.into_inner().unwrap()) {
        let (attempt, fork) = slot.expect("every task evaluated");
        ctx.absorb(&fork);
        results.push(TaskResult {
            task_id: task.id.clone(),
            dataset: task.source_dataset.clone(),
            verdict: attempt.verdict,
            attempt,
        });
    }
    let pairs: Vec<(String, Verdict)> = results
        .iter()
        .map(|r| (r.dataset.clone(), r.verdict))
        .collect();
    let (datasets, micro, macro_avg) = aggregate(&pairs);
    info!(
        tasks = results.len(),
        ?micro,
        ?macro_avg,
        "evaluation complete"
    );
    EvalReport {
        fingerprint: Fingerprint::of(snapshot, ctx),
        population: datasets.iter().map(|d| d.name.clone()).collect(),
        datasets,
        micro,
        macro_avg,
        tasks: results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(ok: bool) -> Verdict {
        if ok {
            Verdict::Success
        } else {
            Verdict::WrongObjective
        }
    }

    #[test]
    fn micro_of_three_out_of_four() {
        let r: Vec<_> = [true, true, true, false]
            .iter()
            .map(|&o| ("d".to_string(), v(o)))
            .collect();
        assert_eq!(aggregate(&r).1, Some(0.75));
    }

    #[test]
    fn micro_and_macro_differ_by_weighting() {
        let mut r = vec![("A".to_string(), v(true)), ("A".to_string(), v(true))];
        r.extend(
            [true, false, false, false]
                .iter()
                .map(|&o| ("B".to_string(), v(o))),
        );
        let (ds, micro, macro_avg) = aggregate(&r);
        assert_eq!(ds.len(), 2);
        assert_eq!(micro, Some(0.5));
        assert_eq!(macro_avg, Some(0.625));
    }

    #[test]
    fn empty_is_null() {
        let (ds, micro, macro_avg) = aggregate(&[]);
        assert!(ds.is_empty());
        assert_eq!((micro, macro_avg), (None, None));
    }
}
