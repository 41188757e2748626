//! Core data model and geometry for weakly supervised tree instance
//! segmentation of airborne lidar tiles.
//!
//! The crate covers everything that does not involve the voxel rating
//! network: point storage and tiling, ground normalization, canopy height
//! rasters, the marker-controlled watershed initializer, the pseudo-label
//! map with its candidate acceptance rules, the reference segmentation
//! backend, evaluation metrics and the synthetic forest generator.

pub mod backend;
pub mod config;
pub mod error;
pub mod eval;
pub mod labels;
pub mod pointcloud;
pub mod rating;
pub mod synth;
pub mod util;
pub mod watershed;

pub use error::{Error, Result};
