use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::insight::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompletionKind {
    SolutionOnly,
    SolutionAndProgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub tasks: Vec<Task>,
    pub completion_kind: CompletionKind,
}

impl Dataset {
    pub fn new(name: impl Into<String>, tasks: Vec<Task>) -> Self {
        let completion_kind = completion_kind(&tasks);
        Self {
            name: name.into(),
            tasks,
            completion_kind,
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// `SolutionAndProgram` only when every task carries a gold program.
pub fn completion_kind(tasks: &[Task]) -> CompletionKind {
    if !tasks.is_empty() && tasks.iter().all(|t| t.gold_program.is_some()) {
        CompletionKind::SolutionAndProgram
    } else {
        CompletionKind::SolutionOnly
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: duplicate task id {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// One JSON task per non-blank line. Line numbers are 1-based.
pub fn parse_dataset(name: &str, text: &str) -> Result<Dataset, DatasetError> {
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut de = serde_json::Deserializer::from_str(raw);
        let task: Task =
            serde_path_to_error::deserialize(&mut de).map_err(|e| DatasetError::ParseError {
                line,
                message: e.to_string(),
            })?;
        if task.id.trim().is_empty() {
            return Err(DatasetError::ParseError {
                line,
                message: "empty task id".into(),
            });
        }
        if !seen.insert(task.id.clone()) {
            return Err(DatasetError::DuplicateId { line, id: task.id });
        }
        tasks.push(task);
    }
    Ok(Dataset::new(name, tasks))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset(&name, &text)
}

/// JSONL text for `tasks`, readable by [`parse_dataset`].
pub fn render_dataset(tasks: &[Task]) -> String {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(t).expect("task serializes"));
        out.push('\n');
    }
    out
}
