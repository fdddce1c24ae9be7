use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::insight::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Task>,
    pub test: Vec<Task>,
    pub warnings: Vec<SplitWarning>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitWarning {
    /// A single-task stratum, placed wholly in train.
    EmptyStratum(String),
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("train fraction {0} is outside (0, 1)")]
pub struct FractionOutOfRange(pub f64);

/// Number of train tasks for a stratum of `n`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    // 0.7 * 10 is 7.000000000000001 in binary floating point.
    let k = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Per-source split: members are ordered by id, shuffled with one ChaCha8
/// stream seeded by `seed` (strata visited in name order), and the first
/// ⌈fraction·n⌉ go to train.
pub fn stratified_split(
    tasks: &[Task],
    train_fraction: f64,
    seed: u64,
) -> Result<Split, FractionOutOfRange> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FractionOutOfRange(train_fraction));
    }
    let mut strata: BTreeMap<&str, Vec<&Task>> = BTreeMap::new();
    for t in tasks {
        strata.entry(t.source_dataset.as_str()).or_default().push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for (name, mut members) in strata {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        if members.len() == 1 {
            warn!(stratum = name, "single-task stratum goes wholly to train");
            split
                .warnings
                .push(SplitWarning::EmptyStratum(name.to_string()));
        }
        let k = train_count(members.len(), train_fraction);
        split
            .train
            .extend(members[..k].iter().map(|t| (*t).clone()));
        split.test.extend(members[k..].iter().map(|t| (*t).clone()));
    }
    Ok(split)
}
