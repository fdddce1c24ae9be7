//! Taxonomy and insight storage: immutable snapshots, the single-writer
//! commit queue, merging, persistence and complexity accounting.

pub mod commit;
pub mod merge;
pub mod persist;
pub mod queue;
pub mod snapshot;
pub mod taxonomy;

pub use commit::{
    apply_commit, Commit, CommitKind, CommitOrigin, CommitPayload, CommitReceipt, MergeSource,
    MergedText, Rejection,
};
pub use merge::{merge_check, merged_insight, MergeDecision};
pub use persist::{checksum, load, save, PersistError};
pub use queue::{ensure_label, AppliedCommit, CommitQueue, LabelConditions, QueueError, Ticket};
pub use snapshot::{complexity, LibrarySnapshot};
pub use taxonomy::{Level1Label, Level2Label, Taxonomy, TaxonomyError, TrackLabels};
