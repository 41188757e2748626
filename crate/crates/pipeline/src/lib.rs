//! Orchestration of the weakly supervised segmentation loop: watershed
//! initialization across tiles, the rate / pseudo-label / retrain
//! iterations, run directories and loop metrics.

pub mod driver;
pub mod error;
pub mod metrics;
pub mod operator;
pub mod run;
pub mod segment;

pub use driver::{apply_candidates, initialize, instances_as_clusters, iteration_seed, run_iteration, run_loop, CandidateOutcome, Context, LoopReport, LoopState, RunOptions, TileRating};
pub use error::{Error, Result};
pub use metrics::{read_metrics, stop_check, write_metrics, MetricsRow, StopReason};
pub use operator::simulate_ratings;
pub use run::{RunDir, RunInputs};
pub use segment::{segment_tiles, cluster_cloud};
