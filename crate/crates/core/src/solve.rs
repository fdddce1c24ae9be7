//! End-to-end solve of one task: retrieval, formulation, program generation,
//! execution, verification and the bounded self-debug loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::exec::{
    run_program, verify_objective, ExecutionResult, Outcome, RunnerConfig, Tolerance,
};
use crate::insight::{Attempt, Insight, Task, Verdict};
use crate::llm::{ids, parse, vars, CallOptions, GatewayError, LlmGateway};
use crate::retrieval::{retrieve, RetrievalConfig, RetrievalSet};
use crate::store::LibrarySnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub max_repair_rounds: u32,
    /// Run the repair loop after execution failures.
    pub self_debug: bool,
    /// Also repair programs whose objective is wrong (evaluation only).
    pub debug_on_wrong_objective: bool,
    /// Bytes of stderr quoted as repair evidence.
    pub evidence_bytes: usize,
    pub tolerance: Tolerance,
    pub runner: RunnerConfig,
    pub retrieval: RetrievalConfig,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_repair_rounds: 3,
            self_debug: true,
            debug_on_wrong_objective: false,
            evidence_bytes: 2000,
            tolerance: Tolerance::default(),
            runner: RunnerConfig::default(),
            retrieval: RetrievalConfig::default(),
        }
    }
}

/// Gateway plus solve configuration. Cloning shares the transcript.
#[derive(Clone)]
pub struct SolveContext {
    pub gateway: LlmGateway,
    pub config: Arc<SolveConfig>,
}

impl SolveContext {
    pub fn new(gateway: LlmGateway, config: SolveConfig) -> Self {
        Self {
            gateway,
            config: Arc::new(config),
        }
    }

    /// Same provider and configuration, private transcript.
    pub fn fork(&self) -> Self {
        Self {
            gateway: self.gateway.fork(),
            config: Arc::clone(&self.config),
        }
    }

    pub fn absorb(&self, other: &SolveContext) {
        self.gateway.absorb(&other.gateway);
    }

    pub fn with_config(&self, config: SolveConfig) -> Self {
        Self {
            gateway: self.gateway.clone(),
            config: Arc::new(config),
        }
    }
}

fn quote_insights(insights: &[&Insight]) -> String {
    if insights.is_empty() {
        return "(none)".into();
    }
    insights
        .iter()
        .map(|i| i.prompt_block())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn formulate(
    task: &Task,
    insights: &[&Insight],
    gateway: &LlmGateway,
    lane: u32,
) -> Result<String, GatewayError> {
    let v = vars([
        ("task_description", task.description.clone()),
        ("insights", quote_insights(insights)),
    ]);
    gateway.complete(ids::FORMULATE, &v, CallOptions::lane(lane))
}

pub fn generate_program(
    task: &Task,
    formulation: &str,
    code_insights: &[&Insight],
    gateway: &LlmGateway,
    lane: u32,
) -> Result<String, GatewayError> {
    let v = vars([
        ("task_description", task.description.clone()),
        ("formulation", formulation.to_string()),
        ("code_insights", quote_insights(code_insights)),
    ]);
    gateway
        .complete(ids::GENERATE_PROGRAM, &v, CallOptions::lane(lane))
        .map(|r| parse::extract_code(&r))
}

pub fn self_debug(
    task: &Task,
    program: &str,
    evidence: &str,
    gateway: &LlmGateway,
    lane: u32,
) -> Result<String, GatewayError> {
    let v = vars([
        ("task_description", task.description.clone()),
        ("program", program.to_string()),
        ("evidence", evidence.to_string()),
    ]);
    gateway
        .complete(ids::SELF_DEBUG, &v, CallOptions::lane(lane))
        .map(|r| parse::extract_code(&r))
}

fn tail(text: &str, bytes: usize) -> &str {
    if text.len() <= bytes {
        return text;
    }
    let mut start = text.len() - bytes;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    &text[start..]
}

/// Outcome line plus the stderr tail.
pub fn failure_evidence(result: &ExecutionResult, bytes: usize) -> String {
    let head = match result.outcome {
        Outcome::Timeout => format!("outcome: timeout after {} ms", result.wall_time_ms),
        Outcome::NonzeroExit => format!("outcome: exited with status {:?}", result.exit_status),
        Outcome::NoSentinel => "outcome: finished without printing OPTIMAL_OBJECTIVE".to_string(),
        Outcome::ObjectiveFound => format!(
            "outcome: reported objective {} was judged incorrect",
            result.objective.unwrap_or(f64::NAN)
        ),
    };
    format!("{head}\nstderr:\n{}", tail(&result.stderr_tail, bytes))
}

pub fn verdict_for(result: &ExecutionResult, task: &Task, tol: Tolerance) -> Verdict {
    match result.outcome {
        Outcome::ObjectiveFound => match result
            .objective
            .map(|v| verify_objective(v, task.answer.value(), tol))
        {
            Some(Ok(true)) => Verdict::Success,
            _ => Verdict::WrongObjective,
        },
        Outcome::NoSentinel | Outcome::NonzeroExit => Verdict::RuntimeError,
        Outcome::Timeout => Verdict::Timeout,
    }
}

fn failed_attempt(mut attempt: Attempt, reason: String) -> Attempt {
    attempt.verdict = Verdict::RuntimeError;
    attempt.failure = Some(reason);
    attempt
}

/// Runs formulation → program → execution → repair with a fixed set of
/// insights. `retrieval` is recorded on the attempt as given.
pub fn solve_with(
    task: &Task,
    retrieval: RetrievalSet,
    insights: &[&Insight],
    library_version: u64,
    trial_index: u32,
    ctx: &SolveContext,
) -> Attempt {
    let cfg = &ctx.config;
    let gw = &ctx.gateway;
    let lane = trial_index;
    let (code, formulation_side): (Vec<&Insight>, Vec<&Insight>) =
        insights.iter().copied().partition(|i| i.track().is_code());
    let mut attempt = Attempt {
        task_id: task.id.clone(),
        trial_index,
        library_version,
        retrieval,
        formulation: String::new(),
        program: String::new(),
        execution: None,
        verdict: Verdict::RuntimeError,
        repair_rounds_used: 0,
        failure: None,
    };
    match formulate(task, &formulation_side, gw, lane) {
        Ok(f) => attempt.formulation = f,
        Err(e) => return failed_attempt(attempt, format!("formulation: {e}")),
    }
    match generate_program(task, &attempt.formulation, &code, gw, lane) {
        Ok(p) => attempt.program = p,
        Err(e) => return failed_attempt(attempt, format!("program generation: {e}")),
    }
    loop {
        let result = match run_program(&attempt.program, &cfg.runner) {
            Ok(r) => r,
            Err(e) => return failed_attempt(attempt, format!("execution: {e}")),
        };
        attempt.verdict = verdict_for(&result, task, cfg.tolerance);
        let repairable = result.outcome.is_execution_failure()
            || (cfg.debug_on_wrong_objective && attempt.verdict == Verdict::WrongObjective);
        let evidence = failure_evidence(&result, cfg.evidence_bytes);
        attempt.execution = Some(result);
        if !cfg.self_debug || !repairable || attempt.repair_rounds_used >= cfg.max_repair_rounds {
            break;
        }
        attempt.repair_rounds_used += 1;
        debug!(task = %task.id, round = attempt.repair_rounds_used, "self-debug");
        match self_debug(task, &attempt.program, &evidence, gw, lane) {
            Ok(p) => attempt.program = p,
            Err(e) => {
                attempt.failure = Some(format!("self-debug: {e}"));
                break;
            }
        }
    }
    attempt
}

/// Retrieval against `snapshot`, then [`solve_with`]. The trial index doubles
/// as the sampling lane.
pub fn solve_task(
    task: &Task,
    snapshot: &LibrarySnapshot,
    ctx: &SolveContext,
    trial_index: u32,
) -> Attempt {
    let retrieval = retrieve(
        task,
        snapshot,
        &ctx.gateway,
        &ctx.config.retrieval,
        trial_index,
    );
    let insights: Vec<&Insight> = retrieval
        .formulation_insights
        .iter()
        .chain(&retrieval.code_insights)
        .filter_map(|id| snapshot.insight(*id))
        .collect();
    solve_with(
        task,
        retrieval.clone(),
        &insights,
        snapshot.version,
        trial_index,
        ctx,
    )
}

/// Solve with `insights` forced into the prompts, bypassing retrieval.
pub fn solve_injected(
    task: &Task,
    insights: &[Insight],
    library_version: u64,
    lane: u32,
    ctx: &SolveContext,
) -> Attempt {
    let mut record = RetrievalSet::empty(&task.id);
    for i in insights.iter().filter(|i| i.id.0 != 0) {
        if i.track().is_code() {
            record.code_insights.push(i.id);
        } else {
            record.formulation_insights.push(i.id);
        }
    }
    let refs: Vec<&Insight> = insights.iter().collect();
    solve_with(task, record, &refs, library_version, lane, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insight::Answer;
    use crate::llm::ScriptedProvider;

    fn task(answer: &str) -> Task {
        Task {
            id: "lp".into(),
            source_dataset: "s".into(),
            description: "Maximise profit.".into(),
            answer: Answer::parse(answer).unwrap(),
            gold_program: None,
            problem_type: None,
        }
    }

    fn ctx(provider: ScriptedProvider, cfg: SolveConfig) -> SolveContext {
        SolveContext::new(LlmGateway::with_provider(Arc::new(provider)), cfg)
    }

    fn sh_config() -> SolveConfig {
        SolveConfig {
            runner: RunnerConfig {
                timeout_ms: 5_000,
                ..RunnerConfig::shell()
            },
            ..SolveConfig::default()
        }
    }

    fn program(body: &str) -> String {
        format!("```sh\n{body}\n```")
    }

    #[test]
    fn empty_library_correct_program_succeeds() {
        let p = ScriptedProvider::new()
            .reply(ids::FORMULATE, "max 3x")
            .reply(ids::GENERATE_PROGRAM, program("echo OPTIMAL_OBJECTIVE=100"));
        let c = ctx(p, sh_config());
        let a = solve_task(&task("100"), &LibrarySnapshot::default(), &c, 0);
        assert_eq!(a.verdict, Verdict::Success);
        assert!(a.retrieval.is_empty());
        assert_eq!(a.repair_rounds_used, 0);
        assert!(a.program.contains("OPTIMAL_OBJECTIVE"));
    }

    #[test]
    fn repair_after_runtime_error() {
        let p = ScriptedProvider::new()
            .reply(ids::FORMULATE, "max 3x")
            .reply(
                ids::GENERATE_PROGRAM,
                program("echo 'SyntaxError' >&2; exit 1"),
            )
            .reply(ids::SELF_DEBUG, program("echo OPTIMAL_OBJECTIVE=100"));
        let c = ctx(p, sh_config());
        let a = solve_task(&task("100"), &LibrarySnapshot::default(), &c, 0);
        assert_eq!(a.verdict, Verdict::Success);
        assert_eq!(a.repair_rounds_used, 1);
        let ex = c.gateway.transcript().exchanges;
        let debug_prompt = &ex
            .iter()
            .find(|e| e.template_id == ids::SELF_DEBUG)
            .unwrap()
            .prompt;
        assert!(debug_prompt.contains("SyntaxError"));
    }

    #[test]
    fn missing_sentinel_is_repaired() {
        let p = ScriptedProvider::new()
            .reply(ids::FORMULATE, "f")
            .reply(ids::GENERATE_PROGRAM, program("echo 100"))
            .reply(ids::SELF_DEBUG, program("echo OPTIMAL_OBJECTIVE=100"));
        let a = solve_task(
            &task("100"),
            &LibrarySnapshot::default(),
            &ctx(p, sh_config()),
            0,
        );
        assert_eq!(a.verdict, Verdict::Success);
        assert_eq!(a.repair_rounds_used, 1);
    }

    #[test]
    fn repair_budget_exhausts() {
        let p = ScriptedProvider::new()
            .reply(ids::FORMULATE, "f")
            .reply(ids::GENERATE_PROGRAM, program("exit 2"))
            .reply(ids::SELF_DEBUG, program("exit 2"));
        let c = ctx(p, sh_config());
        let a = solve_task(&task("100"), &LibrarySnapshot::default(), &c, 0);
        assert_eq!(a.verdict, Verdict::RuntimeError);
        assert_eq!(a.repair_rounds_used, 3);
        assert_eq!(c.gateway.count(ids::SELF_DEBUG), 3);
    }

    #[test]
    fn wrong_objective_does_not_trigger_repair() {
        let p = ScriptedProvider::new()
            .reply(ids::FORMULATE, "f")
            .reply(ids::GENERATE_PROGRAM, program("echo OPTIMAL_OBJECTIVE=99"));
        let c = ctx(p, sh_config());
        let a = solve_task(&task("100"), &LibrarySnapshot::default(), &c, 0);
        assert_eq!(a.verdict, Verdict::WrongObjective);
        assert_eq!(a.repair_rounds_used, 0);
        assert_eq!(c.gateway.count(ids::SELF_DEBUG), 0);
    }

    #[test]
    fn self_debug_can_be_disabled() {
        let p = ScriptedProvider::new()
            .reply(ids::FORMULATE, "f")
            .reply(ids::GENERATE_PROGRAM, program("exit 2"));
        let cfg = SolveConfig {
            self_debug: false,
            ..sh_config()
        };
        let c = ctx(p, cfg);
        let a = solve_task(&task("100"), &LibrarySnapshot::default(), &c, 0);
        assert_eq!(a.verdict, Verdict::RuntimeError);
        assert_eq!(a.repair_rounds_used, 0);
        assert_eq!(c.gateway.count(ids::SELF_DEBUG), 0);
    }

    #[test]
    fn evidence_is_truncated_to_tail() {
        let result = ExecutionResult {
            exit_status: Some(1),
            stdout_tail: String::new(),
            stderr_tail: format!("{}END", "x".repeat(5000)),
            objective: None,
            wall_time_ms: 1,
            outcome: Outcome::NonzeroExit,
            artifact_dir: None,
        };
        let ev = failure_evidence(&result, 2000);
        let stderr_part = ev.split("stderr:\n").nth(1).unwrap();
        assert_eq!(stderr_part.len(), 2000);
        assert!(stderr_part.ends_with("END"));
    }

    #[test]
    fn gateway_failure_is_recorded() {
        let c = ctx(ScriptedProvider::new(), sh_config());
        let a = solve_task(&task("1"), &LibrarySnapshot::default(), &c, 0);
        assert_eq!(a.verdict, Verdict::RuntimeError);
        assert!(a.failure.unwrap().starts_with("formulation"));
    }
}
