//! The acquisition phase: trials, self-exploration, insight extraction,
//! local verification and batch-organized training.

mod batch;
mod explore;
mod extract;
mod order;
mod train;
mod trials;
mod verify;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::insight::{Task, TaskId};

pub use batch::{learn_batch, process_task, BatchReport, CandidateRejection, TaskOutcome};
pub use explore::{render_history, self_explore, ExplorationState, ExplorationStep};
pub use extract::{extract_insights, ProposedInsight};
pub use order::{classify_missing, cluster_and_order, jaccard};
pub use train::{
    audit_library, train, AuditFailure, IterationReport, StopReason, TrainError, TrainReport,
};
pub use trials::{run_trials, TrialBundle};
pub use verify::{local_verify, resolve_context, verify_merged};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_trials: u32,
    pub batch_size: usize,
    pub max_iterations: u32,
    /// Stop once two consecutive iteration accuracies differ by less than this.
    pub plateau_eps: f64,
    pub explore_budget: u32,
    pub explore_temperature: f64,
    pub workers: usize,
    pub lambda: f64,
    /// Abort when an authoritative exchange misses the cassette.
    pub strict_cassette: bool,
    /// Run an evolution round after each learning round.
    pub evolve: bool,
    pub refine_candidates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trials: 3,
            batch_size: 8,
            max_iterations: 5,
            plateau_eps: 0.01,
            explore_budget: 5,
            explore_temperature: 0.7,
            workers: 1,
            lambda: 0.0,
            strict_cassette: false,
            evolve: true,
            refine_candidates: 4,
        }
    }
}

/// Tasks by id, for re-solving the source tasks of library insights.
pub type TaskMap = BTreeMap<TaskId, Task>;

pub fn task_map(tasks: &[Task]) -> TaskMap {
    tasks.iter().map(|t| (t.id.clone(), t.clone())).collect()
}
