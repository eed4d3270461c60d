//! Synthetic worlds with hidden, concept-driven targets; the budgeted
//! query oracle; success-rate and pixel metrics; dataset ingestion.

mod dataset;
mod metrics;
mod world;

pub use dataset::{
    expand_point_labels, load_dataset, write_dataset, LabelMode, Manifest, PointLabel,
    RegionManifest, SURFACE_THRESHOLD, UNLABELED,
};
pub use metrics::{
    classification_metrics, sr_metric, step_contribution, Classification, Confusion, QueryLog,
    QueryRecord, THRESHOLD,
};
pub use world::{generate_world, oracle_score, World, WorldConfig};
