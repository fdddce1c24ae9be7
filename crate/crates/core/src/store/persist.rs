//! Library document format.
//!
//! A saved library is a pretty-printed JSON object with a fixed field order
//! (`schema_version`, `version`, `taxonomy`, `insights`, `profiles`) followed
//! by one trailing line `checksum sha256:<hex>` computed over the JSON text.
//! Identical snapshots therefore always produce identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::insight::{Insight, PerformanceProfile};

use super::snapshot::LibrarySnapshot;
use super::taxonomy::{Taxonomy, TrackLabels};

pub const SCHEMA_VERSION: u32 = 1;
const CHECKSUM_PREFIX: &str = "checksum sha256:";

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("corrupt library file at {field}: {message}")]
    CorruptFile { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PersistError {
    fn corrupt(field: impl Into<String>, message: impl Into<String>) -> Self {
        PersistError::CorruptFile {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LibraryDocument {
    schema_version: u32,
    version: u64,
    taxonomy: Vec<TrackLabels>,
    insights: Vec<Insight>,
    profiles: Vec<PerformanceProfile>,
}

#[derive(Serialize, Deserialize)]
struct SeedDocument {
    schema_version: u32,
    taxonomy: Vec<TrackLabels>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn seal(body: String) -> String {
    let sum = sha256_hex(body.as_bytes());
    format!("{body}\n{CHECKSUM_PREFIX}{sum}\n")
}

/// Splits a sealed document into its body after verifying the checksum line.
pub(crate) fn unseal(text: &str) -> Result<&str, PersistError> {
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let (body, last) = trimmed
        .rsplit_once('\n')
        .ok_or_else(|| PersistError::corrupt("checksum", "missing checksum line"))?;
    let expected = last
        .strip_prefix(CHECKSUM_PREFIX)
        .ok_or_else(|| PersistError::corrupt("checksum", "missing checksum line"))?;
    if sha256_hex(body.as_bytes()) != expected.trim() {
        return Err(PersistError::corrupt("checksum", "checksum mismatch"));
    }
    Ok(body)
}

pub(crate) fn seal_json<T: Serialize>(value: &T) -> String {
    seal(serde_json::to_string_pretty(value).expect("serializable document"))
}

/// Canonical text of a snapshot, including its checksum line.
pub fn render(snapshot: &LibrarySnapshot) -> String {
    let doc = LibraryDocument {
        schema_version: SCHEMA_VERSION,
        version: snapshot.version,
        taxonomy: snapshot.taxonomy.tracks.clone(),
        insights: snapshot.insights.values().cloned().collect(),
        profiles: snapshot.profiles.values().cloned().collect(),
    };
    seal_json(&doc)
}

/// Content address of a snapshot: the checksum of its canonical document.
pub fn checksum(snapshot: &LibrarySnapshot) -> String {
    let text = render(snapshot);
    let body = unseal(&text).expect("freshly sealed");
    sha256_hex(body.as_bytes())
}

pub fn save(snapshot: &LibrarySnapshot, path: &Path) -> Result<(), PersistError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, render(snapshot))?;
    Ok(())
}

fn check_schema(value: &serde_json::Value) -> Result<(), PersistError> {
    match value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(v) if v == u64::from(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(PersistError::corrupt(
            "schema_version",
            format!("unsupported schema version {v}"),
        )),
        None => Err(PersistError::corrupt("schema_version", "missing")),
    }
}

fn decode<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, PersistError> {
    let de = &mut serde_json::Deserializer::from_str(body);
    serde_path_to_error::deserialize(de)
        .map_err(|e| PersistError::corrupt(e.path().to_string(), e.inner().to_string()))
}

pub fn parse(text: &str) -> Result<LibrarySnapshot, PersistError> {
    let body = unseal(text)?;
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| PersistError::corrupt(".", e.to_string()))?;
    check_schema(&value)?;
    let doc: LibraryDocument = decode(body)?;
    let mut snapshot = LibrarySnapshot::with_taxonomy(Taxonomy {
        tracks: doc.taxonomy,
    });
    snapshot.version = doc.version;
    for (i, insight) in doc.insights.into_iter().enumerate() {
        if snapshot.insights.insert(insight.id, insight).is_some() {
            return Err(PersistError::corrupt(
                format!("insights[{i}].id"),
                "duplicate insight id",
            ));
        }
    }
    for profile in doc.profiles {
        snapshot.profiles.insert(profile.insight_id, profile);
    }
    Ok(snapshot)
}

pub fn load(path: &Path) -> Result<LibrarySnapshot, PersistError> {
    parse(&std::fs::read_to_string(path)?)
}

/// The taxonomy seed asset bundled with the crate.
pub const DEFAULT_SEED: &str = include_str!("../../assets/taxonomy_seed.json");

/// Seed files are plain JSON (no checksum line): `{schema_version, taxonomy}`.
pub fn parse_seed(text: &str) -> Result<Taxonomy, PersistError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PersistError::corrupt(".", e.to_string()))?;
    check_schema(&value)?;
    let doc: SeedDocument = decode(text)?;
    let mut taxonomy = Taxonomy::default();
    for track in doc.taxonomy {
        for l1 in track.labels {
            taxonomy
                .add_level1(track.track, &l1.name, &l1.condition)
                .map_err(|e| {
                    PersistError::corrupt(format!("taxonomy.{}", l1.name), e.to_string())
                })?;
            for l2 in l1.children {
                taxonomy
                    .add_level2(track.track, &l1.name, &l2.name, &l2.condition)
                    .map_err(|e| {
                        PersistError::corrupt(
                            format!("taxonomy.{}.{}", l1.name, l2.name),
                            e.to_string(),
                        )
                    })?;
            }
        }
    }
    Ok(taxonomy)
}

pub fn load_seed(path: &Path) -> Result<Taxonomy, PersistError> {
    parse_seed(&std::fs::read_to_string(path)?)
}

pub fn default_seed() -> Taxonomy {
    parse_seed(DEFAULT_SEED).expect("bundled seed is valid")
}
