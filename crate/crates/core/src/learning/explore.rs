use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::exec::{run_program, ExecutionResult, Outcome};
use crate::insight::{Attempt, Task, TaskId, Verdict};
use crate::llm::{ids, parse, vars, CallOptions};
use crate::solve::{verdict_for, SolveContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationStep {
    pub program: String,
    pub execution: Option<ExecutionResult>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationState {
    pub task_id: TaskId,
    pub history: Vec<ExplorationStep>,
    pub budget_remaining: u32,
    /// First proposal whose objective verified.
    pub reference_program: Option<String>,
}

fn summarize(execution: Option<&ExecutionResult>, verdict: Verdict) -> String {
    let Some(ex) = execution else {
        return "the program could not be run".into();
    };
    match (ex.outcome, verdict) {
        (Outcome::ObjectiveFound, Verdict::Success) => {
            format!("reported objective {}", ex.objective.unwrap_or(f64::NAN))
        }
        (Outcome::ObjectiveFound, _) => format!(
            "reported objective {}, which is not the known optimum",
            ex.objective.unwrap_or(f64::NAN)
        ),
        (Outcome::NoSentinel, _) => "finished without printing OPTIMAL_OBJECTIVE".into(),
        (Outcome::Timeout, _) => format!("timed out after {} ms", ex.wall_time_ms),
        (Outcome::NonzeroExit, _) => format!("failed with stderr:\n{}", ex.stderr_tail.trim_end()),
    }
}

/// Failed trials first, then the exploration proposals so far. Only
/// proposals are headed `### Attempt`.
pub fn render_history(failed: &[&Attempt], steps: &[ExplorationStep]) -> String {
    let mut out = String::new();
    for a in failed {
        out.push_str(&format!(
            "### Failed trial {}\nProgram:\n{}\nResult: {}\n\n",
            a.trial_index + 1,
            a.program.trim_end(),
            summarize(a.execution.as_ref(), a.verdict)
        ));
    }
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!(
            "### Attempt {}\nProgram:\n{}\nResult: {}\n\n",
            i + 1,
            s.program.trim_end(),
            summarize(s.execution.as_ref(), s.verdict)
        ));
    }
    if out.is_empty() {
        out.push_str("(none)");
    }
    out.trim_end().to_string()
}

/// Proposes programs until one reproduces the known optimum or the budget
/// runs out. Proposals sample on lane 0.
pub fn self_explore(
    task: &Task,
    failed: &[&Attempt],
    ctx: &SolveContext,
    budget: u32,
    temperature: f64,
) -> ExplorationState {
    let mut state = ExplorationState {
        task_id: task.id.clone(),
        history: Vec::new(),
        budget_remaining: budget,
        reference_program: None,
    };
    while state.budget_remaining > 0 {
        state.budget_remaining -= 1;
        let v = vars([
            ("task_description", task.description.clone()),
            ("history", render_history(failed, &state.history)),
        ]);
        let opts = CallOptions {
            lane: 0,
            temperature: Some(temperature),
        };
        let program = match ctx.gateway.complete(ids::SELF_EXPLORE, &v, opts) {
            Ok(reply) => parse::extract_code(&reply),
            Err(e) => {
                debug!(task = %task.id, error = %e, "exploration proposal unavailable");
                break;
            }
        };
        let execution = run_program(&program, &ctx.config.runner).ok();
        let verdict = execution.as_ref().map_or(Verdict::RuntimeError, |ex| {
            verdict_for(ex, task, ctx.config.tolerance)
        });
        state.history.push(ExplorationStep {
            program: program.clone(),
            execution,
            verdict,
        });
        if verdict.is_success() {
            state.reference_program = Some(program);
            break;
        }
    }
    state
}
