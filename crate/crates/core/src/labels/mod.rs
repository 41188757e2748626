//! Pseudo-label map: per-point semantic class and instance id, its initial
//! construction from rated clusters, and the candidate acceptance and merge
//! rules applied when new single-tree clusters are proposed.

mod map;
mod merge;
mod rules;

pub use map::{build_initial_labels, read_label_dir, write_label_dir, LabelMap, LabelsManifest, Semantic};
pub use merge::merge_candidate;
pub use rules::{
    accept_candidate, horizontal_diameter, ioc, AcceptRules, Decision, OverlapTest, Rejection,
};
