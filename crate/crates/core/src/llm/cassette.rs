//! Record/replay of model exchanges.
//!
//! A cassette file holds one JSON record per line followed by a final
//! `checksum sha256:<hex>` line covering every record line. Replay looks
//! responses up by `(prompt_hash, lane)`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::store::persist::sha256_hex;

use super::gateway::Exchange;
use super::provider::{CompletionRequest, Provider, ProviderError, ProviderKind};

const CHECKSUM_PREFIX: &str = "checksum sha256:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub template_id: String,
    pub prompt_hash: String,
    pub lane: u32,
    pub response: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CassetteError {
    #[error("corrupt cassette: {0}")]
    CorruptCassette(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Records in first-seen order with duplicate keys dropped.
pub fn records_from(transcript: &[Exchange]) -> Vec<CassetteRecord> {
    let mut seen = std::collections::HashSet::new();
    transcript
        .iter()
        .filter(|e| seen.insert((e.rendered_prompt_hash.clone(), e.lane)))
        .map(|e| CassetteRecord {
            template_id: e.template_id.clone(),
            prompt_hash: e.rendered_prompt_hash.clone(),
            lane: e.lane,
            response: e.response_text.clone(),
        })
        .collect()
}

pub fn render_cassette(records: &[CassetteRecord]) -> String {
    let mut body = String::new();
    for record in records {
        body.push_str(&serde_json::to_string(record).expect("serializable record"));
        body.push('\n');
    }
    let sum = sha256_hex(body.as_bytes());
    format!("{body}{CHECKSUM_PREFIX}{sum}\n")
}

pub fn record_cassette(transcript: &[Exchange], path: &Path) -> Result<(), CassetteError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, render_cassette(&records_from(transcript)))?;
    Ok(())
}

pub fn parse_cassette(text: &str) -> Result<Vec<CassetteRecord>, CassetteError> {
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let (body, last) = match trimmed.rsplit_once('\n') {
        Some((body, last)) => (format!("{body}\n"), last),
        None => (String::new(), trimmed),
    };
    let expected = last
        .strip_prefix(CHECKSUM_PREFIX)
        .ok_or_else(|| CassetteError::CorruptCassette("missing checksum line".into()))?;
    if sha256_hex(body.as_bytes()) != expected.trim() {
        return Err(CassetteError::CorruptCassette("checksum mismatch".into()));
    }
    body.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| CassetteError::CorruptCassette(format!("record {}: {e}", i + 1)))
        })
        .collect()
}

pub struct CassetteProvider {
    responses: HashMap<(String, u32), String>,
    len: usize,
}

impl CassetteProvider {
    pub fn from_records(records: Vec<CassetteRecord>) -> Self {
        let len = records.len();
        let mut responses = HashMap::with_capacity(len);
        for r in records {
            responses
                .entry((r.prompt_hash, r.lane))
                .or_insert(r.response);
        }
        Self { responses, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, hash: &str, lane: u32) -> bool {
        self.responses.contains_key(&(hash.to_string(), lane))
    }
}

pub fn open_cassette(path: &Path) -> Result<CassetteProvider, CassetteError> {
    let text = std::fs::read_to_string(path)?;
    Ok(CassetteProvider::from_records(parse_cassette(&text)?))
}

impl Provider for CassetteProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Cassette
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.responses
            .get(&(request.prompt_hash.clone(), request.lane))
            .cloned()
            .ok_or_else(|| ProviderError::CassetteMiss {
                template_id: request.template_id.clone(),
                hash: request.prompt_hash.clone(),
                lane: request.lane,
            })
    }
}
