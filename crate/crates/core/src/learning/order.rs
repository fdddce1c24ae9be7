use std::collections::BTreeSet;

use tracing::warn;

use crate::insight::Task;
use crate::llm::{ids, vars, CallOptions, LlmGateway};

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token-set Jaccard similarity; two empty texts count as identical.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (tokens(a), tokens(b));
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Groups by problem type in order of first appearance; within a group the
/// first member stays first and the rest follow by descending similarity to
/// it, ties keeping input order.
pub fn cluster_and_order(batch: &[Task]) -> Vec<Task> {
    let mut groups: Vec<(Option<String>, Vec<&Task>)> = Vec::new();
    for t in batch {
        let key = t.problem_type.as_ref().map(|s| s.trim().to_uppercase());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(t),
            None => groups.push((key, vec![t])),
        }
    }
    let mut out = Vec::with_capacity(batch.len());
    for (_, members) in groups {
        let head = members[0];
        let mut rest: Vec<(f64, &Task)> = members[1..]
            .iter()
            .map(|t| (jaccard(&head.description, &t.description), *t))
            .collect();
        rest.sort_by(|a, b| b.0.total_cmp(&a.0));
        out.push(head.clone());
        out.extend(rest.into_iter().map(|(_, t)| t.clone()));
    }
    out
}

/// Fills in missing problem types with one judge call per task.
pub fn classify_missing(tasks: &mut [Task], gateway: &LlmGateway) {
    for t in tasks.iter_mut().filter(|t| t.problem_type.is_none()) {
        let v = vars([("task_description", t.description.clone())]);
        match gateway.complete(ids::CLASSIFY_PROBLEM, &v, CallOptions::default()) {
            Ok(reply) => {
                let label = reply
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .trim_matches(|c: char| !c.is_alphanumeric())
                    .to_uppercase();
                if !label.is_empty() {
                    t.problem_type = Some(label);
                }
            }
            Err(e) => warn!(task = %t.id, error = %e, "problem type unavailable"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::insight::Answer;

    fn task(id: &str, ty: &str, desc: &str) -> Task {
        Task {
            id: id.into(),
            source_dataset: "s".into(),
            description: desc.into(),
            answer: Answer::parse("1").unwrap(),
            gold_program: None,
            problem_type: Some(ty.into()),
        }
    }

    fn ids(tasks: &[Task]) -> Vec<&str> {
        tasks.iter().map(|t| t.id.as_str()).collect()
    }

    #[test]
    fn groups_by_type_in_first_appearance_order() {
        let batch = vec![
            task("a", "LP", "x"),
            task("b", "MILP", "y"),
            task("c", "LP", "x"),
        ];
        assert_eq!(ids(&cluster_and_order(&batch)), ["a", "c", "b"]);
    }

    #[test]
    fn near_duplicates_become_adjacent() {
        let batch = vec![
            task("a", "LP", "blend crude oil into fuel at minimum cost"),
            task("b", "LP", "ship goods from depots to customers"),
            task("c", "LP", "blend crude oil into diesel at minimum cost"),
        ];
        assert!(
            jaccard(&batch[0].description, &batch[2].description)
                > jaccard(&batch[0].description, &batch[1].description)
        );
        assert_eq!(ids(&cluster_and_order(&batch)), ["a", "c", "b"]);
    }

    #[test]
    fn single_task_unchanged() {
        let batch = vec![task("a", "LP", "x")];
        assert_eq!(cluster_and_order(&batch), batch);
    }

    #[test]
    fn jaccard_oracle() {
        // {a,b,c} vs {b,c,d}: 2 shared of 4.
        assert_eq!(jaccard("a b c", "B, c d"), 0.5);
        assert_eq!(jaccard("", ""), 1.0);
        assert_eq!(jaccard("a", ""), 0.0);
    }
}
