use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::insight::{LabelLevel, LabelNode, TaxonomyPath, Track};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level2Label {
    pub name: String,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level1Label {
    pub name: String,
    pub condition: String,
    #[serde(default)]
    pub children: Vec<Level2Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackLabels {
    pub track: Track,
    #[serde(default)]
    pub labels: Vec<Level1Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("label name is empty")]
    EmptyName,
    #[error("label condition is empty")]
    EmptyCondition,
    #[error("label {0:?} already exists")]
    Exists(String),
    #[error("level-1 label {0:?} does not exist")]
    MissingParent(String),
}

/// Three tracks, each holding level-1 labels with level-2 children. Labels
/// keep insertion order; name lookups are case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub tracks: Vec<TrackLabels>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self {
            tracks: Track::ALL
                .iter()
                .map(|&track| TrackLabels {
                    track,
                    labels: Vec::new(),
                })
                .collect(),
        }
    }
}

impl Taxonomy {
    fn track(&self, track: Track) -> Option<&TrackLabels> {
        self.tracks.iter().find(|t| t.track == track)
    }

    fn track_mut(&mut self, track: Track) -> &mut TrackLabels {
        if let Some(i) = self.tracks.iter().position(|t| t.track == track) {
            return &mut self.tracks[i];
        }
        self.tracks.push(TrackLabels {
            track,
            labels: Vec::new(),
        });
        self.tracks.sort_by_key(|t| t.track);
        let i = self.tracks.iter().position(|t| t.track == track).unwrap();
        &mut self.tracks[i]
    }

    pub fn level1(&self, track: Track, name: &str) -> Option<&Level1Label> {
        self.track(track)?
            .labels
            .iter()
            .find(|l| l.name.eq_ignore_ascii_case(name.trim()))
    }

    pub fn level2(&self, track: Track, level1: &str, level2: &str) -> Option<&Level2Label> {
        self.level1(track, level1)?
            .children
            .iter()
            .find(|l| l.name.eq_ignore_ascii_case(level2.trim()))
    }

    /// The canonical (stored-case) path if `path` names an existing L2 node.
    pub fn resolve(&self, path: &TaxonomyPath) -> Option<TaxonomyPath> {
        let l1 = self.level1(path.track, &path.level1)?;
        let l2 = l1
            .children
            .iter()
            .find(|l| l.name.eq_ignore_ascii_case(path.level2.trim()))?;
        Some(TaxonomyPath::new(
            path.track,
            l1.name.clone(),
            l2.name.clone(),
        ))
    }

    pub fn add_level1(
        &mut self,
        track: Track,
        name: &str,
        condition: &str,
    ) -> Result<(), TaxonomyError> {
        check_label(name, condition)?;
        if self.level1(track, name).is_some() {
            return Err(TaxonomyError::Exists(name.trim().to_string()));
        }
        self.track_mut(track).labels.push(Level1Label {
            name: name.trim().to_string(),
            condition: condition.trim().to_string(),
            children: Vec::new(),
        });
        Ok(())
    }

    pub fn add_level2(
        &mut self,
        track: Track,
        level1: &str,
        name: &str,
        condition: &str,
    ) -> Result<(), TaxonomyError> {
        check_label(name, condition)?;
        let parent = self
            .track_mut(track)
            .labels
            .iter_mut()
            .find(|l| l.name.eq_ignore_ascii_case(level1.trim()))
            .ok_or_else(|| TaxonomyError::MissingParent(level1.trim().to_string()))?;
        if parent
            .children
            .iter()
            .any(|c| c.name.eq_ignore_ascii_case(name.trim()))
        {
            return Err(TaxonomyError::Exists(name.trim().to_string()));
        }
        parent.children.push(Level2Label {
            name: name.trim().to_string(),
            condition: condition.trim().to_string(),
        });
        Ok(())
    }

    /// All L2 paths in canonical order.
    pub fn level2_paths(&self) -> Vec<TaxonomyPath> {
        let mut out = Vec::new();
        for t in &self.tracks {
            for l1 in &t.labels {
                for l2 in &l1.children {
                    out.push(TaxonomyPath::new(t.track, l1.name.clone(), l2.name.clone()));
                }
            }
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.tracks
            .iter()
            .flat_map(|t| &t.labels)
            .map(|l1| 1 + l1.children.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.node_count() == 0
    }

    /// Flattened node view with parent and child links.
    pub fn nodes(&self) -> Vec<LabelNode> {
        let mut out = Vec::new();
        for t in &self.tracks {
            for l1 in &t.labels {
                out.push(LabelNode {
                    name: l1.name.clone(),
                    level: LabelLevel::L1,
                    track: t.track,
                    condition: l1.condition.clone(),
                    parent: None,
                    children: l1
                        .children
                        .iter()
                        .map(|c| c.name.clone())
                        .collect::<BTreeSet<_>>(),
                });
                for l2 in &l1.children {
                    out.push(LabelNode {
                        name: l2.name.clone(),
                        level: LabelLevel::L2,
                        track: t.track,
                        condition: l2.condition.clone(),
                        parent: Some(l1.name.clone()),
                        children: BTreeSet::new(),
                    });
                }
            }
        }
        out
    }
}

fn check_label(name: &str, condition: &str) -> Result<(), TaxonomyError> {
    if name.trim().is_empty() {
        return Err(TaxonomyError::EmptyName);
    }
    if condition.trim().is_empty() {
        return Err(TaxonomyError::EmptyCondition);
    }
    Ok(())
}
