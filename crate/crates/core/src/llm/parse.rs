//! Lenient extraction of JSON and code blocks from model replies.

use serde::de::DeserializeOwned;
use serde_json::Value;

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                blocks.push(&body[..end]);
                rest = &body[end + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// Span from the first opening bracket to its matching close, honouring strings.
fn balanced_span(text: &str) -> Option<&str> {
    let start = text.find(['[', '{'])?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '[' | '{' => depth += 1,
            ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// The first JSON value found in `text`: the whole reply, a fenced block, or
/// the first balanced bracketed span.
pub fn extract_json(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if v.is_array() || v.is_object() {
            return Some(v);
        }
    }
    for block in fenced_blocks(text) {
        if let Ok(v) = serde_json::from_str::<Value>(block.trim()) {
            return Some(v);
        }
    }
    balanced_span(text).and_then(|s| serde_json::from_str(s).ok())
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Option<T> {
    extract_json(text).and_then(|v| serde_json::from_value(v).ok())
}

/// The last fenced code block, or the whole reply when it has none.
pub fn extract_code(text: &str) -> String {
    match fenced_blocks(text).last() {
        Some(block) => block.to_string(),
        None => text.trim().to_string() + "\n",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_json_in_prose() {
        let v = extract_json("Sure, here it is: [{\"a\": \"]\"}] hope that helps").unwrap();
        assert_eq!(v[0]["a"], "]");
    }

    #[test]
    fn prefers_fenced_json() {
        let v = extract_json("intro\n```json\n{\"x\": 1}\n```\n").unwrap();
        assert_eq!(v["x"], 1);
    }

    #[test]
    fn rejects_garbage() {
        assert!(extract_json("no json here").is_none());
        assert!(extract_json("[unclosed").is_none());
    }

    #[test]
    fn code_block_extraction() {
        assert_eq!(
            extract_code("text\n```sh\necho 1\n```\nmore\n```\necho 2\n```"),
            "echo 2\n"
        );
        assert_eq!(extract_code("echo 3"), "echo 3\n");
    }
}
