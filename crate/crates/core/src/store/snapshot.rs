use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::insight::{Insight, InsightId, InsightStatus, PerformanceProfile, TaskId, TaxonomyPath};

use super::taxonomy::Taxonomy;

/// Immutable view of the library at one commit point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibrarySnapshot {
    pub version: u64,
    pub taxonomy: Taxonomy,
    pub insights: BTreeMap<InsightId, Insight>,
    pub profiles: BTreeMap<InsightId, PerformanceProfile>,
}

impl Default for LibrarySnapshot {
    fn default() -> Self {
        Self::with_taxonomy(Taxonomy::default())
    }
}

impl LibrarySnapshot {
    pub fn with_taxonomy(taxonomy: Taxonomy) -> Self {
        Self {
            version: 0,
            taxonomy,
            insights: BTreeMap::new(),
            profiles: BTreeMap::new(),
        }
    }

    pub fn insight(&self, id: InsightId) -> Option<&Insight> {
        self.insights.get(&id)
    }

    pub fn active_insights(&self) -> impl Iterator<Item = &Insight> {
        self.insights.values().filter(|i| i.is_active())
    }

    pub fn active_count(&self) -> usize {
        self.active_insights().count()
    }

    /// Active insights filed under the given L2 label, ascending by id.
    pub fn insights_under(&self, path: &TaxonomyPath) -> Vec<&Insight> {
        self.active_insights()
            .filter(|i| i.taxonomy.same_label(path))
            .collect()
    }

    pub fn next_id(&self) -> InsightId {
        InsightId(self.insights.keys().next_back().map_or(1, |id| id.0 + 1))
    }

    pub fn profile(&self, id: InsightId) -> PerformanceProfile {
        self.profiles
            .get(&id)
            .cloned()
            .unwrap_or_else(|| PerformanceProfile::new(id))
    }

    /// Follows merge links to the active insight that now carries `id`.
    pub fn resolve_active(&self, mut id: InsightId) -> Option<&Insight> {
        for _ in 0..=self.insights.len() {
            let insight = self.insights.get(&id)?;
            match insight.status {
                InsightStatus::Active => return Some(insight),
                InsightStatus::Merged { into } => id = into,
                InsightStatus::Retired => return None,
            }
        }
        None
    }

    /// Source tasks an active insight is accountable for: its own plus those
    /// of every insight merged into it.
    pub fn source_tasks(&self, id: InsightId) -> Vec<TaskId> {
        let Some(insight) = self.insights.get(&id) else {
            return Vec::new();
        };
        let mut tasks = vec![insight.provenance.source_task_id.clone()];
        for absorbed in &insight.absorbed {
            for t in self.source_tasks(*absorbed) {
                if !tasks.contains(&t) {
                    tasks.push(t);
                }
            }
        }
        tasks
    }

    /// A copy with one insight's condition replaced; used for retrieval replay.
    pub fn with_condition(&self, id: InsightId, condition: &str) -> LibrarySnapshot {
        let mut copy = self.clone();
        if let Some(insight) = copy.insights.get_mut(&id) {
            insight.condition = condition.to_string();
        }
        copy
    }
}

/// Ω(ℓ): the number of active insights.
pub fn complexity(snapshot: &LibrarySnapshot) -> usize {
    snapshot.active_count()
}
