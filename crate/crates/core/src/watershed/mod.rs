//! Closed-form initial crown segmentation: canopy height model smoothing,
//! seed detection and marker-controlled priority-flood watershed.

mod cluster;
mod flood;
mod maxima;
mod smooth;

pub use cluster::{read_cluster_dir, write_cluster_dir, Cluster, ClusterSet, ClusterSource};
pub use flood::watershed_clusters;
pub use maxima::detect_maxima;
pub use smooth::{gaussian_kernel_1d, smooth_chm};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pointcloud::{rasterize_chm, Tile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WatershedParams {
    /// CHM cell size, meters.
    pub chm_pitch: f64,
    /// Gaussian smoothing sigma, meters.
    pub sigma: f64,
    /// Seeds lower than this are ignored, meters.
    pub min_height: f64,
    /// Seed suppression radius, meters.
    pub radius: f64,
    /// CHM cells and points below this height stay unassigned, meters.
    pub background: f64,
}

impl Default for WatershedParams {
    fn default() -> Self {
        WatershedParams {
            chm_pitch: 0.5,
            sigma: 1.0,
            min_height: 2.0,
            radius: 2.0,
            background: 0.5,
        }
    }
}

/// Full initializer for one height-normalized tile. Cluster ids start at
/// `first_id`.
pub fn segment_tile(tile: &Tile, params: &WatershedParams, first_id: u32) -> Result<ClusterSet> {
    let chm = rasterize_chm(tile, params.chm_pitch);
    let smoothed = smooth_chm(&chm, params.sigma);
    let seeds = detect_maxima(&smoothed, params.min_height, params.radius)?;
    Ok(watershed_clusters(tile, &smoothed, &seeds, params.background, first_id))
}
