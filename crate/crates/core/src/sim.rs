//! Deterministic stand-in for a language model.
//!
//! The simulator knows a small catalog of modeling pitfalls. A pitfall is
//! present in a task when one of its signal phrases occurs and none of its
//! blocker phrases does. Formulations and programs carry their reasoning as
//! plain text markers, so every later prompt (repair, exploration, insight
//! extraction, diagnosis) can be answered by reading those markers back. An
//! injected insight fixes a pitfall when it is filed under the pitfall's
//! level-2 label; injecting a misleading pitfall's insight into a task that
//! contains its blocker pushes the formulation into an error.
//!
//! Insight and label conditions are answered with a tiny grammar:
//!
//! ```text
//! Applies when the problem mentions a; b.
//! Applies only when the problem mentions all of a; b.
//! Does not apply when the problem mentions c.
//! ```
//!
//! Anything else is judged not to hold.

use std::collections::BTreeSet;

use serde::Serialize;
use serde_json::json;

use std::sync::Arc;

use crate::exec::RunnerConfig;
use crate::insight::{Task, Track};
use crate::learning::{process_task, task_map, TrainConfig};
use crate::llm::{ids, CompletionRequest, LlmGateway, Provider, ProviderError, ProviderKind};
use crate::solve::{SolveConfig, SolveContext};
use crate::store::persist::default_seed;
use crate::store::{apply_commit, LibrarySnapshot, Rejection};

pub struct Pitfall {
    pub key: &'static str,
    pub track: Track,
    pub level1: &'static str,
    pub level1_condition: &'static str,
    pub level2: &'static str,
    pub signals: &'static [&'static str],
    pub blockers: &'static [&'static str],
    /// Implementation fault rather than a modeling error.
    pub code: bool,
    /// Whether any insight can fix it.
    pub learnable: bool,
    /// Lowest sampling lane on which it shows up.
    pub min_lane: u32,
    /// Objective offset when left unresolved.
    pub penalty: i64,
    pub explanation: &'static str,
    pub example: &'static str,
    pub discrepancy: &'static str,
}

pub const CATALOG: &[Pitfall] = &[
    Pitfall {
        key: "makespan",
        track: Track::GeneralFormulation,
        level1: "Objective Specification",
        level1_condition: "Applies when the problem states what quantity to minimize or maximize.",
        level2: "Sum vs. Makespan Confusion",
        signals: &["makespan", "finish all jobs as early as possible"],
        blockers: &["total completion time"],
        code: false,
        learnable: true,
        min_lane: 0,
        penalty: 7,
        explanation: "Minimizing the latest finish time needs an auxiliary variable bounded below by every completion time; summing completion times optimizes a different objective.",
        example: "C_max >= C_j for all jobs j\nminimize C_max",
        discrepancy: "objective sums completion times instead of bounding the latest finish",
    },
    Pitfall {
        key: "fixed_charge",
        track: Track::DomainModeling,
        level1: "Facility Location",
        level1_condition: "Applies when sites can be opened or closed at a cost.",
        level2: "Fixed Charge (Big-M Linking)",
        signals: &["only if the facility is opened", "opening cost"],
        blockers: &["already open"],
        code: false,
        learnable: true,
        min_lane: 0,
        penalty: 7,
        explanation: "Each opening decision is a binary variable whose fixed cost enters the objective, and flow through a site is linked to it by a big-M bound.",
        example: "x_ij <= M * y_i\ncost += f_i * y_i",
        discrepancy: "fixed opening cost is not linked to a binary open variable",
    },
    Pitfall {
        key: "integrality",
        track: Track::GeneralFormulation,
        level1: "Variable Definition",
        level1_condition: "Applies when decision variables must be defined.",
        level2: "Continuous vs. Discrete Confusion",
        signals: &["number of trucks", "whole units"],
        blockers: &[],
        code: false,
        learnable: true,
        min_lane: 0,
        penalty: 7,
        explanation: "Counts of indivisible items must be integer variables; a continuous relaxation reports a fractional optimum.",
        example: "n = model.addVar(vtype=GRB.INTEGER)",
        discrepancy: "count variable is continuous instead of integer",
    },
    Pitfall {
        key: "proportion",
        track: Track::GeneralFormulation,
        level1: "Constraint Formulation",
        level1_condition: "Applies when the problem imposes limits on combinations of variables.",
        level2: "Incorrect Relational Operators",
        signals: &["percent of the total", "share of the total"],
        blockers: &[],
        code: false,
        learnable: true,
        min_lane: 0,
        penalty: 7,
        explanation: "A minimum share of a total is a lower bound relative to the sum of all parts, not an equality or an upper bound.",
        example: "x_a >= 0.3 * (x_a + x_b)",
        discrepancy: "share requirement uses the wrong relational operator",
    },
    Pitfall {
        key: "strict",
        track: Track::CodeImplementation,
        level1: "Solver & API Syntax",
        level1_condition: "Applies when constraints are written through a solver API.",
        level2: "Strict Inequalities",
        signals: &["strictly more than"],
        blockers: &[],
        code: true,
        learnable: true,
        min_lane: 0,
        penalty: 3,
        explanation: "Solvers accept only non-strict inequalities; a strict bound on integral data becomes a non-strict bound shifted by one unit.",
        example: "model.addConstr(x >= 10 + 1)  # instead of x > 10",
        discrepancy: "strict inequality passed to the solver API",
    },
    Pitfall {
        key: "keyerror",
        track: Track::CodeImplementation,
        level1: "Data I/O & Validation",
        level1_condition: "Applies when the program builds data structures from problem data.",
        level2: "KeyError & Index Mismatch",
        signals: &["indexed by city"],
        blockers: &[],
        code: true,
        learnable: true,
        min_lane: 1,
        penalty: 0,
        explanation: "Dictionaries keyed by names must be iterated with the same keys they were built with.",
        example: "for c in cost.keys(): ...  # not range(len(cost))",
        discrepancy: "data dictionary indexed with positions instead of city names",
    },
    Pitfall {
        key: "recourse",
        track: Track::DomainModeling,
        level1: "Stochastic Programming",
        level1_condition: "Applies when decisions are taken before uncertainty is revealed.",
        level2: "Scenario Recourse",
        signals: &["two-stage stochastic recourse"],
        blockers: &[],
        code: false,
        learnable: false,
        min_lane: 0,
        penalty: 11,
        explanation: "",
        example: "",
        discrepancy: "recourse stage is not modeled per scenario",
    },
];

pub fn pitfall(key: &str) -> Option<&'static Pitfall> {
    CATALOG.iter().find(|p| p.key == key)
}

fn by_level2(l2: &str) -> Option<&'static Pitfall> {
    CATALOG
        .iter()
        .find(|p| p.level2.eq_ignore_ascii_case(l2.trim()))
}

fn mentions(text: &str, phrase: &str) -> bool {
    text.to_lowercase().contains(&phrase.to_lowercase())
}

impl Pitfall {
    pub fn present(&self, description: &str, lane: u32) -> bool {
        lane >= self.min_lane
            && self.signals.iter().any(|s| mentions(description, s))
            && !self.blockers.iter().any(|b| mentions(description, b))
    }

    fn blocked(&self, description: &str) -> bool {
        self.blockers.iter().any(|b| mentions(description, b))
    }

    fn signals_in(&self, description: &str) -> Vec<String> {
        self.signals
            .iter()
            .filter(|s| mentions(description, s))
            .map(|s| s.to_string())
            .collect()
    }

    pub fn label_condition(&self) -> String {
        Condition {
            any: self.signals.iter().map(|s| s.to_string()).collect(),
            ..Condition::default()
        }
        .render()
    }
}

/// Sum of the integer literals in a description; the simulated true optimum.
pub fn base_objective(description: &str) -> i64 {
    description
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse::<i64>().ok())
        .sum()
}

/// Parsed condition in the simulator's grammar.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Condition {
    pub any: Vec<String>,
    pub all: Vec<String>,
    pub none: Vec<String>,
}

const ANY: &str = "applies when the problem mentions ";
const ALL: &str = "applies only when the problem mentions all of ";
const NONE: &str = "does not apply when the problem mentions ";

fn push_unique(list: &mut Vec<String>, items: impl IntoIterator<Item = String>) {
    for item in items {
        if !list.iter().any(|x| x.eq_ignore_ascii_case(&item)) {
            list.push(item);
        }
    }
}

impl Condition {
    pub fn parse(text: &str) -> Option<Condition> {
        let mut out = Condition::default();
        for sentence in text.split('.').map(str::trim).filter(|s| !s.is_empty()) {
            let lower = sentence.to_lowercase();
            let (target, rest) = if let Some(r) = lower.strip_prefix(ALL) {
                (&mut out.all, r)
            } else if let Some(r) = lower.strip_prefix(ANY) {
                (&mut out.any, r)
            } else {
                let r = lower.strip_prefix(NONE)?;
                (&mut out.none, r)
            };
            let start = sentence.len() - rest.len();
            let items = sentence[start..]
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string);
            push_unique(target, items);
        }
        if out.any.is_empty() && out.all.is_empty() {
            return None;
        }
        Some(out)
    }

    pub fn holds(&self, description: &str) -> bool {
        (self.any.is_empty() || self.any.iter().any(|a| mentions(description, a)))
            && self.all.iter().all(|a| mentions(description, a))
            && !self.none.iter().any(|a| mentions(description, a))
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        if !self.any.is_empty() {
            parts.push(format!(
                "Applies when the problem mentions {}.",
                self.any.join("; ")
            ));
        }
        if !self.all.is_empty() {
            parts.push(format!(
                "Applies only when the problem mentions all of {}.",
                self.all.join("; ")
            ));
        }
        if !self.none.is_empty() {
            parts.push(format!(
                "Does not apply when the problem mentions {}.",
                self.none.join("; ")
            ));
        }
        parts.join(" ")
    }

    fn union(&self, other: &Condition) -> Condition {
        let mut out = self.clone();
        push_unique(&mut out.any, other.any.clone());
        push_unique(&mut out.all, other.all.clone());
        push_unique(&mut out.none, other.none.clone());
        out
    }
}

/// Whether `condition` holds for `description` under the simulator's grammar.
pub fn condition_holds(condition: &str, description: &str) -> bool {
    Condition::parse(condition).is_some_and(|c| c.holds(description))
}

fn tag<'a>(prompt: &'a str, name: &str) -> &'a str {
    let open = format!("<{name}>\n");
    let close = format!("\n</{name}>");
    let Some(start) = prompt.find(&open).map(|i| i + open.len()) else {
        return "";
    };
    match prompt[start..].find(&close) {
        Some(end) => &prompt[start..start + end],
        None => "",
    }
}

/// An insight as quoted in a prompt.
#[derive(Debug, Clone, Default)]
struct QuotedInsight {
    id: Option<u64>,
    level2: String,
    condition: String,
    example: String,
}

fn quoted_insights(text: &str) -> Vec<QuotedInsight> {
    let mut out: Vec<QuotedInsight> = Vec::new();
    let mut in_example = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("[Insight ") {
            let (id, path) = rest.split_once("] ").unwrap_or((rest, ""));
            out.push(QuotedInsight {
                id: id.trim().parse().ok(),
                level2: path.rsplit(" / ").next().unwrap_or("").trim().to_string(),
                ..QuotedInsight::default()
            });
            in_example = false;
            continue;
        }
        let Some(current) = out.last_mut() else {
            continue;
        };
        if in_example {
            if !current.example.is_empty() {
                current.example.push('\n');
            }
            current.example.push_str(line);
        } else if let Some(c) = line.strip_prefix("Condition: ") {
            current.condition = c.trim().to_string();
        } else if line.starts_with("Example:") {
            in_example = true;
        }
    }
    for q in &mut out {
        q.example = q.example.trim().to_string();
    }
    out
}

fn injected_pitfalls(text: &str) -> BTreeSet<&'static str> {
    quoted_insights(text)
        .iter()
        .filter_map(|q| by_level2(&q.level2))
        .map(|p| p.key)
        .collect()
}

fn list_line(text: &str, prefix: &str) -> Vec<String> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(prefix))
        .map(|rest| {
            rest.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty() && *s != "none")
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn join_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "none".into()
    } else {
        items.join(", ")
    }
}

fn objective(description: &str, unresolved: &[String], misapplied: &[String]) -> i64 {
    let penalty: i64 = unresolved
        .iter()
        .filter_map(|k| pitfall(k))
        .map(|p| p.penalty)
        .sum();
    base_objective(description) + penalty + 7 * misapplied.len() as i64
}

/// Markers a simulated program carries.
#[derive(Debug, Default)]
struct ProgramMarks {
    applied: Vec<String>,
    unresolved: Vec<String>,
    misapplied: Vec<String>,
    code_issue: Option<String>,
}

impl ProgramMarks {
    fn parse(program: &str) -> Self {
        Self {
            applied: list_line(program, "# applied:"),
            unresolved: list_line(program, "# unresolved:"),
            misapplied: list_line(program, "# misapplied:"),
            code_issue: list_line(program, "# code issue:").into_iter().next(),
        }
    }

    fn header(&self) -> String {
        let mut s = format!(
            "#!/bin/sh\n# applied: {}\n# unresolved: {}\n# misapplied: {}\n",
            join_or_none(&self.applied),
            join_or_none(&self.unresolved),
            join_or_none(&self.misapplied)
        );
        if let Some(c) = &self.code_issue {
            s.push_str(&format!("# code issue: {c}\n"));
        }
        s
    }

    fn program(&self, description: &str, faulty: bool) -> String {
        let mut s = self.header();
        let value = objective(description, &self.unresolved, &self.misapplied);
        match (faulty, self.code_issue.as_deref()) {
            (true, Some("strict")) => {
                s.push_str(
                    "echo \"GurobiError: strict inequalities are not supported\" >&2\nexit 1\n",
                );
            }
            (true, Some("keyerror")) => {
                s.push_str("echo \"KeyError: 0 (cost is keyed by city name)\" >&2\nexit 1\n");
            }
            (false, Some("strict")) => {
                s.push_str(&format!("echo \"OPTIMAL_OBJECTIVE={}\"\n", value + 3));
            }
            _ => s.push_str(&format!("echo \"OPTIMAL_OBJECTIVE={value}\"\n")),
        }
        s
    }
}

fn fenced(program: &str) -> String {
    format!("```sh\n{program}```\n")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Also propose a candidate insight that fixes nothing.
    pub decoy_insights: bool,
}

pub const DECOY_LEVEL2: &str = "Decoy Guidance";

#[derive(Debug, Clone, Default)]
pub struct SimProvider {
    pub options: SimOptions,
}

impl SimProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_options(options: SimOptions) -> Self {
        Self { options }
    }

    fn formulate(&self, prompt: &str, lane: u32) -> String {
        let desc = tag(prompt, "task_description");
        let injected = injected_pitfalls(tag(prompt, "insights"));
        let mut applied = Vec::new();
        let mut unresolved = Vec::new();
        let mut misapplied = Vec::new();
        for p in CATALOG.iter().filter(|p| !p.code) {
            if p.present(desc, lane) {
                if p.learnable && injected.contains(p.key) {
                    applied.push(p.key.to_string());
                } else {
                    unresolved.push(p.key.to_string());
                }
            } else if injected.contains(p.key) && p.blocked(desc) {
                misapplied.push(p.key.to_string());
            }
        }
        format!(
            "Decision variables, objective and constraints follow the problem statement.\nApplied guidance: {}\nUnresolved issues: {}\nMisapplied guidance: {}\n",
            join_or_none(&applied),
            join_or_none(&unresolved),
            join_or_none(&misapplied)
        )
    }

    fn generate_program(&self, prompt: &str, lane: u32) -> String {
        let desc = tag(prompt, "task_description");
        let formulation = tag(prompt, "formulation");
        let injected = injected_pitfalls(tag(prompt, "code_insights"));
        let mut marks = ProgramMarks {
            applied: list_line(formulation, "Applied guidance:"),
            unresolved: list_line(formulation, "Unresolved issues:"),
            misapplied: list_line(formulation, "Misapplied guidance:"),
            code_issue: None,
        };
        for p in CATALOG.iter().filter(|p| p.code && p.present(desc, lane)) {
            if injected.contains(p.key) {
                marks.applied.push(p.key.to_string());
            } else if marks.code_issue.is_none() {
                marks.code_issue = Some(p.key.to_string());
            }
        }
        fenced(&marks.program(desc, true))
    }

    fn self_debug(&self, prompt: &str) -> String {
        let desc = tag(prompt, "task_description");
        let program = tag(prompt, "program");
        let marks = ProgramMarks::parse(program);
        match marks.code_issue.as_deref() {
            Some("strict") => fenced(&marks.program(desc, false)),
            _ => fenced(&format!("{}\n", program.trim_end())),
        }
    }

    fn self_explore(&self, prompt: &str) -> String {
        let desc = tag(prompt, "task_description");
        let tried = tag(prompt, "history").matches("### Attempt").count();
        let present: Vec<&Pitfall> = CATALOG
            .iter()
            .filter(|p| !p.code)
            .chain(CATALOG.iter().filter(|p| p.code))
            .filter(|p| p.present(desc, 0))
            .collect();
        let learnable: Vec<&&Pitfall> = present.iter().filter(|p| p.learnable).collect();
        let fixed: BTreeSet<&str> = learnable.iter().take(tried + 1).map(|p| p.key).collect();
        let mut marks = ProgramMarks::default();
        for p in &present {
            if fixed.contains(p.key) {
                marks.applied.push(p.key.to_string());
            } else if p.code {
                marks.code_issue.get_or_insert_with(|| p.key.to_string());
            } else {
                marks.unresolved.push(p.key.to_string());
            }
        }
        fenced(&marks.program(desc, true))
    }

    fn generate_insights(&self, prompt: &str) -> String {
        let desc = tag(prompt, "task_description");
        let marks = ProgramMarks::parse(tag(prompt, "program"));
        let mut keys: Vec<String> = marks.unresolved.clone();
        keys.extend(marks.code_issue.clone());
        let mut out = Vec::new();
        for p in keys
            .iter()
            .filter_map(|k| pitfall(k))
            .filter(|p| p.learnable)
        {
            out.push(json!({
                "track": p.track.as_str(),
                "level1": p.level1,
                "level1_condition": p.level1_condition,
                "level2": p.level2,
                "level2_condition": p.label_condition(),
                "condition": Condition { any: p.signals_in(desc), ..Condition::default() }.render(),
                "explanation": p.explanation,
                "example": p.example,
            }));
        }
        if self.options.decoy_insights {
            let anchor = desc
                .split_whitespace()
                .take(3)
                .collect::<Vec<_>>()
                .join(" ");
            out.push(json!({
                "track": Track::GeneralFormulation.as_str(),
                "level1": "Objective Specification",
                "level1_condition": "Applies when the problem states what quantity to minimize or maximize.",
                "level2": DECOY_LEVEL2,
                "level2_condition": Condition { any: vec![anchor.clone()], ..Condition::default() }.render(),
                "condition": Condition { any: vec![anchor], ..Condition::default() }.render(),
                "explanation": "Restate every coefficient before writing the objective.",
                "example": "# restate data",
            }));
        }
        serde_json::to_string_pretty(&out).expect("serializable")
    }

    fn retrieve_label(&self, prompt: &str) -> String {
        #[derive(serde::Deserialize, Serialize)]
        struct Entry {
            track: String,
            level1: String,
            level2: String,
            #[serde(default, skip_serializing)]
            level2_condition: String,
        }
        let desc = tag(prompt, "task_description");
        let listing: Vec<Entry> = serde_json::from_str(tag(prompt, "taxonomy")).unwrap_or_default();
        let chosen: Vec<Entry> = listing
            .into_iter()
            .filter(|e| condition_holds(&e.level2_condition, desc))
            .collect();
        serde_json::to_string(&chosen).expect("serializable")
    }

    fn retrieve_condition(&self, prompt: &str) -> String {
        #[derive(serde::Deserialize)]
        struct Entry {
            id: u64,
            condition: String,
        }
        let desc = tag(prompt, "task_description");
        let entries: Vec<Entry> = serde_json::from_str(tag(prompt, "insights")).unwrap_or_default();
        let out: Vec<_> = entries
            .iter()
            .map(|e| {
                let ok = condition_holds(&e.condition, desc);
                json!({
                    "id": e.id,
                    "applicable": ok,
                    "rationale": if ok { "condition holds" } else { "condition does not hold" },
                })
            })
            .collect();
        serde_json::to_string(&out).expect("serializable")
    }

    fn merge_insights(&self, prompt: &str) -> String {
        let existing = quoted_insights(tag(prompt, "existing"));
        let candidate = quoted_insights(tag(prompt, "candidate"));
        let (Some(a), Some(b)) = (existing.first(), candidate.first()) else {
            return json!({"decision": "distinct"}).to_string();
        };
        let same = a.example == b.example && by_level2(&a.level2).is_some();
        let (Some(ca), Some(cb)) = (
            Condition::parse(&a.condition),
            Condition::parse(&b.condition),
        ) else {
            return json!({"decision": "distinct"}).to_string();
        };
        if !same {
            return json!({"decision": "distinct"}).to_string();
        }
        let p = by_level2(&a.level2).expect("checked above");
        json!({
            "decision": "merge",
            "condition": ca.union(&cb).render(),
            "explanation": p.explanation,
            "example": a.example,
        })
        .to_string()
    }

    fn diagnose_pos_neg(&self, prompt: &str) -> String {
        let desc = tag(prompt, "task_description");
        let role = match quoted_insights(tag(prompt, "insight"))
            .first()
            .and_then(|q| by_level2(&q.level2))
        {
            Some(p) if p.present(desc, 0) || p.present(desc, u32::MAX) => "positive",
            Some(p) if p.blocked(desc) => "negative",
            _ => "neutral",
        };
        json!({"role": role, "rationale": format!("insight judged {role} for this problem")})
            .to_string()
    }

    fn diagnose_issues(&self, prompt: &str) -> String {
        let marks = ProgramMarks::parse(tag(prompt, "generated_program"));
        let mut keys = marks.unresolved.clone();
        keys.extend(marks.code_issue.clone());
        let out: Vec<&str> = keys
            .iter()
            .filter_map(|k| pitfall(k))
            .map(|p| p.discrepancy)
            .collect();
        serde_json::to_string(&out).expect("serializable")
    }

    fn diagnose_unretrieved(&self, prompt: &str) -> String {
        let discrepancies = tag(prompt, "discrepancies");
        let out: Vec<_> = quoted_insights(tag(prompt, "insights"))
            .iter()
            .filter_map(|q| {
                let p = by_level2(&q.level2)?;
                let id = q.id?;
                discrepancies
                    .contains(p.discrepancy)
                    .then(|| json!({"id": id, "discrepancy": p.discrepancy}))
            })
            .collect();
        serde_json::to_string(&out).expect("serializable")
    }

    fn refine_conditions(&self, prompt: &str) -> String {
        let Some(q) = quoted_insights(tag(prompt, "insight")).into_iter().next() else {
            return "[]".into();
        };
        let (Some(p), Some(current)) = (by_level2(&q.level2), Condition::parse(&q.condition))
        else {
            return "[]".into();
        };
        let negatives = tag(prompt, "negative_tasks");
        let unretrieved = tag(prompt, "unretrieved_tasks");
        let anchors = p.signals_in(unretrieved);
        let exclusions: Vec<String> = p
            .blockers
            .iter()
            .filter(|b| mentions(negatives, b))
            .map(|b| b.to_string())
            .collect();
        let mut anchored = current.clone();
        push_unique(&mut anchored.any, anchors.clone());
        let mut excluded = current.clone();
        push_unique(&mut excluded.none, exclusions.clone());
        let mut both = anchored.clone();
        push_unique(&mut both.none, exclusions);
        let mut strict = current.clone();
        let all = std::mem::take(&mut strict.any);
        push_unique(&mut strict.all, all);
        let out = json!([
            {"strategy": "KeywordAnchor", "condition": anchored.render()},
            {"strategy": "ExclusionClause", "condition": excluded.render()},
            {"strategy": "MergeTriggers", "condition": both.render()},
            {"strategy": "AddPrecondition", "condition": strict.render()},
        ]);
        out.to_string()
    }

    fn classify(&self, prompt: &str) -> String {
        let desc = tag(prompt, "task_description").to_lowercase();
        let discrete = ["integer", "binary", "number of", "opened"]
            .iter()
            .any(|k| desc.contains(k));
        if discrete { "MILP" } else { "LP" }.to_string()
    }
}

impl Provider for SimProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let prompt = request.prompt.as_str();
        let lane = request.lane;
        Ok(match request.template_id.as_str() {
            ids::FORMULATE => self.formulate(prompt, lane),
            ids::GENERATE_PROGRAM => self.generate_program(prompt, lane),
            ids::SELF_DEBUG => self.self_debug(prompt),
            ids::SELF_EXPLORE => self.self_explore(prompt),
            ids::GENERATE_INSIGHTS => self.generate_insights(prompt),
            ids::RETRIEVE_LABEL => self.retrieve_label(prompt),
            ids::RETRIEVE_CONDITION => self.retrieve_condition(prompt),
            ids::MERGE_INSIGHTS => self.merge_insights(prompt),
            ids::DIAGNOSE_POS_NEG => self.diagnose_pos_neg(prompt),
            ids::DIAGNOSE_ISSUES => self.diagnose_issues(prompt),
            ids::DIAGNOSE_UNRETRIEVED => self.diagnose_unretrieved(prompt),
            ids::REFINE_CONDITIONS => self.refine_conditions(prompt),
            ids::CLASSIFY_PROBLEM => self.classify(prompt),
            other => {
                return Err(ProviderError::Fatal(format!(
                    "simulator has no handler for {other}"
                )))
            }
        })
    }
}

pub const CORPUS: &str = include_str!("../assets/corpus.jsonl");

/// The bundled twelve-task corpus the simulator is built around.
pub fn synthetic_corpus() -> Vec<Task> {
    CORPUS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled corpus parses"))
        .collect()
}

/// Solve context backed by the simulator and the `sh` runner.
pub fn sim_context(options: SimOptions) -> SolveContext {
    SolveContext::new(
        LlmGateway::with_provider(Arc::new(SimProvider::with_options(options))),
        SolveConfig {
            runner: RunnerConfig::shell(),
            ..SolveConfig::default()
        },
    )
}

/// Empty library on the bundled taxonomy seed.
pub fn seeded_library() -> LibrarySnapshot {
    LibrarySnapshot::with_taxonomy(default_seed())
}

/// A library holding two active insights filed under the same label, learned
/// independently from T01 and T02 so that neither absorbed the other.
pub fn duplicate_pair_library(ctx: &SolveContext) -> LibrarySnapshot {
    let corpus = synthetic_corpus();
    let tasks = task_map(&corpus);
    let cfg = TrainConfig::default();
    let find = |id: &str| corpus.iter().find(|t| t.id == id).expect("bundled task");
    let mut snap = seeded_library();
    for c in &process_task(find("T01"), &snap, ctx, &tasks, &cfg, 1, 0).commits {
        snap = apply_commit(&snap, c)
            .expect("replays against its own base")
            .0;
    }
    for c in &process_task(find("T02"), &seeded_library(), ctx, &tasks, &cfg, 1, 0).commits {
        match apply_commit(&snap, c) {
            Ok((next, _)) => snap = next,
            Err(Rejection::LabelExists(_)) => {}
            Err(e) => panic!("fixture commit rejected: {e}"),
        }
    }
    snap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insight::{Insight, Provenance, SupervisionMode, TaxonomyPath};
    use crate::llm::{vars, CallOptions, LlmGateway, Vars};
    use std::sync::Arc;

    fn gw() -> LlmGateway {
        LlmGateway::with_provider(Arc::new(SimProvider::new()))
    }

    fn ask(template: &str, v: Vars, lane: u32) -> String {
        gw().complete(template, &v, CallOptions::lane(lane))
            .unwrap()
    }

    fn insight_for(key: &str, condition: &str) -> Insight {
        let p = pitfall(key).unwrap();
        let mut i = Insight::candidate(
            TaxonomyPath::new(p.track, p.level1, p.level2),
            condition,
            p.explanation,
            p.example,
            Provenance {
                source_task_id: "x".into(),
                supervision_mode: SupervisionMode::GoldProgram,
                created_iteration: 1,
                created_version: 0,
                verification_context: vec![],
                verification_lane: 0,
            },
        );
        i.id = crate::insight::InsightId(4);
        i
    }

    #[test]
    fn condition_grammar_round_trips() {
        let c = Condition {
            any: vec!["makespan".into(), "finish all jobs".into()],
            all: vec![],
            none: vec!["total completion time".into()],
        };
        let text = c.render();
        assert_eq!(Condition::parse(&text), Some(c.clone()));
        assert!(c.holds("Minimize the MAKESPAN."));
        assert!(!c.holds("minimize total completion time rather than makespan"));
        assert!(!c.holds("maximize profit"));
        assert!(Condition::parse("Use when scheduling.").is_none());
        assert!(!condition_holds("free text", "makespan"));
    }

    #[test]
    fn base_objective_sums_integers() {
        assert_eq!(base_objective("3 jobs, 2 machines and 10 hours"), 15);
        assert_eq!(base_objective("no digits"), 0);
    }

    #[test]
    fn injected_insight_fixes_its_pitfall() {
        let desc = "Minimize the makespan of 4 jobs.".to_string();
        let bare = ask(
            ids::FORMULATE,
            vars([
                ("task_description", desc.clone()),
                ("insights", "(none)".into()),
            ]),
            0,
        );
        assert!(bare.contains("Unresolved issues: makespan"));
        let block =
            insight_for("makespan", "Applies when the problem mentions makespan.").prompt_block();
        let fixed = ask(
            ids::FORMULATE,
            vars([("task_description", desc.clone()), ("insights", block)]),
            0,
        );
        assert!(fixed.contains("Applied guidance: makespan"));
        let program = ask(
            ids::GENERATE_PROGRAM,
            vars([
                ("task_description", desc),
                ("formulation", fixed),
                ("code_insights", "(none)".into()),
            ]),
            0,
        );
        assert!(program.contains("OPTIMAL_OBJECTIVE=4"));
    }

    #[test]
    fn blocked_task_is_misled() {
        let desc =
            "Minimize total completion time rather than the makespan for 2 jobs.".to_string();
        let block =
            insight_for("makespan", "Applies when the problem mentions makespan.").prompt_block();
        let f = ask(
            ids::FORMULATE,
            vars([("task_description", desc), ("insights", block)]),
            0,
        );
        assert!(f.contains("Misapplied guidance: makespan"));
        assert!(f.contains("Unresolved issues: none"));
    }

    #[test]
    fn keyerror_only_on_later_lanes() {
        let desc = "Costs indexed by city for 2 depots.".to_string();
        let f = "Applied guidance: none\nUnresolved issues: none\nMisapplied guidance: none\n"
            .to_string();
        let mk = |lane| {
            ask(
                ids::GENERATE_PROGRAM,
                vars([
                    ("task_description", desc.clone()),
                    ("formulation", f.clone()),
                    ("code_insights", "(none)".into()),
                ]),
                lane,
            )
        };
        assert!(mk(0).contains("OPTIMAL_OBJECTIVE=2"));
        assert!(mk(1).contains("KeyError"));
    }

    #[test]
    fn exploration_fixes_one_more_pitfall_per_attempt() {
        let desc = "Pay the opening cost and choose the number of trucks; 5 hubs.".to_string();
        let first = ask(
            ids::SELF_EXPLORE,
            vars([
                ("task_description", desc.clone()),
                ("history", "(none)".into()),
            ]),
            0,
        );
        assert!(first.contains("# unresolved: integrality"));
        let second = ask(
            ids::SELF_EXPLORE,
            vars([
                ("task_description", desc),
                ("history", "### Attempt 1\n...".into()),
            ]),
            0,
        );
        assert!(second.contains("# unresolved: none"));
        assert!(second.contains("OPTIMAL_OBJECTIVE=5"));
    }

    #[test]
    fn refinement_candidates_follow_strategy_order() {
        let block =
            insight_for("makespan", "Applies when the problem mentions makespan.").prompt_block();
        let reply = ask(
            ids::REFINE_CONDITIONS,
            vars([
                ("insight", block),
                ("positive_tasks", "".into()),
                (
                    "negative_tasks",
                    "total completion time rather than makespan".into(),
                ),
                (
                    "unretrieved_tasks",
                    "finish all jobs as early as possible".into(),
                ),
                ("n_candidates", "4".into()),
            ]),
            0,
        );
        let v: serde_json::Value = serde_json::from_str(&reply).unwrap();
        assert_eq!(v[0]["strategy"], "KeywordAnchor");
        assert!(v[0]["condition"]
            .as_str()
            .unwrap()
            .contains("finish all jobs"));
        assert!(v[1]["condition"]
            .as_str()
            .unwrap()
            .contains("Does not apply when the problem mentions total completion time"));
    }

    #[test]
    fn corpus_is_consistent() {
        let tasks = synthetic_corpus();
        assert_eq!(tasks.len(), 12);
        for t in &tasks {
            assert_eq!(
                t.answer.value(),
                base_objective(&t.description) as f64,
                "{}",
                t.id
            );
            if let Some(g) = &t.gold_program {
                assert!(
                    g.contains(&format!("OPTIMAL_OBJECTIVE={}", t.answer.as_str())),
                    "{}",
                    t.id
                );
            }
        }
    }
}
