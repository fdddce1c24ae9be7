use serde::{Deserialize, Serialize};

use crate::insight::{Attempt, Task, TaskId};
use crate::solve::{solve_task, SolveContext};
use crate::store::LibrarySnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBundle {
    pub task_id: TaskId,
    pub attempts: Vec<Attempt>,
    pub any_success: bool,
}

impl TrialBundle {
    pub fn failed(&self) -> impl Iterator<Item = &Attempt> {
        self.attempts.iter().filter(|a| !a.verdict.is_success())
    }

    pub fn first_success(&self) -> Option<&Attempt> {
        self.attempts.iter().find(|a| a.verdict.is_success())
    }
}

/// `n` independent solves; trial `k` samples on lane `k` and retrieves afresh.
pub fn run_trials(
    task: &Task,
    snapshot: &LibrarySnapshot,
    ctx: &SolveContext,
    n: u32,
) -> TrialBundle {
    let attempts: Vec<Attempt> = (0..n.max(1))
        .map(|k| solve_task(task, snapshot, ctx, k))
        .collect();
    TrialBundle {
        task_id: task.id.clone(),
        any_success: attempts.iter().any(|a| a.verdict.is_success()),
        attempts,
    }
}
