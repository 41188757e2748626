use arbor_core::pointcloud::{PointCloud, Tile};
use arbor_core::watershed::{segment_tile, Cluster, ClusterSet, WatershedParams};
use rayon::prelude::*;

use crate::error::Result;

/// Watershed over every tile; cluster ids are unique across tiles, numbered
/// in tile order from 1.
pub fn segment_tiles(tiles: &[Tile], params: &WatershedParams) -> Result<Vec<ClusterSet>> {
    let sets: Vec<ClusterSet> = tiles.par_iter().map(|t| segment_tile(t, params, 1)).collect::<arbor_core::Result<_>>()?;
    let mut offset = 0;
    let mut out = Vec::with_capacity(sets.len());
    for set in sets {
        let n = set.iter().map(|c| c.id).max().unwrap_or(0);
        out.push(renumber(&set, offset)?);
        offset += n;
    }
    Ok(out)
}

/// Shift every cluster id by `offset`.
pub fn renumber(set: &ClusterSet, offset: u32) -> Result<ClusterSet> {
    let mut out = ClusterSet::new(set.tile.clone(), set.point_count());
    for c in set.iter() {
        out.insert(Cluster { id: c.id + offset, ..c.clone() })?;
    }
    Ok(out)
}

/// Points of a cluster as a standalone cloud.
pub fn cluster_cloud(tile: &Tile, cluster: &Cluster) -> PointCloud {
    let idx: Vec<usize> = cluster.point_indices.iter().map(|&i| i as usize).collect();
    tile.cloud.select(&idx)
}
