//! Dataset ingestion, stratified splitting, success-rate evaluation, the
//! penalized objective and library reports.

mod dataset;
mod evaluate;
mod objective;
mod report;
mod split;

pub use dataset::{
    completion_kind, load_dataset, parse_dataset, render_dataset, CompletionKind, Dataset,
    DatasetError,
};
pub use evaluate::{aggregate, evaluate, DatasetScore, EvalReport, Fingerprint, TaskResult};
pub use objective::{objective_trace, ObjectiveTrace};
pub use report::{
    case_study_report, export_markdown, taxonomy_report, CaseStudyError, ClassifiedPair, Outcome,
    OutcomeCounts, OutcomeReport, Share, TaxonomyDistribution, TrackShare,
};
pub use split::{stratified_split, train_count, FractionOutOfRange, Split, SplitWarning};
