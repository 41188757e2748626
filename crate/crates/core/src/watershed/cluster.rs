use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::pointcloud::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSource {
    Watershed,
    Backend,
    /// Reference instances, e.g. from the synthetic generator.
    Truth,
}

/// An instance hypothesis: a set of point indices within one tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub id: u32,
    /// Ascending, unique.
    pub point_indices: Vec<u32>,
    /// Member with maximal height above ground, lowest index on ties.
    pub apex_index: u32,
    pub centroid: [f64; 3],
    pub source: ClusterSource,
}

impl Cluster {
    /// Build from arbitrary member indices (sorted and deduplicated here).
    pub fn new(id: u32, mut indices: Vec<u32>, cloud: &PointCloud, source: ClusterSource) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyCluster);
        }
        indices.sort_unstable();
        indices.dedup();
        let mut apex = indices[0];
        let mut sum = [0.0; 3];
        for &i in &indices {
            let i = i as usize;
            if cloud.hag[i] > cloud.hag[apex as usize] {
                apex = i as u32;
            }
            sum[0] += cloud.x[i];
            sum[1] += cloud.y[i];
            sum[2] += cloud.z[i];
        }
        let n = indices.len() as f64;
        Ok(Cluster {
            id,
            point_indices: indices,
            apex_index: apex,
            centroid: [sum[0] / n, sum[1] / n, sum[2] / n],
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }

    pub fn contains(&self, i: u32) -> bool {
        self.point_indices.binary_search(&i).is_ok()
    }
}

/// Disjoint clusters over one tile plus the point -> cluster inverse map
/// (0 = unassigned).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub tile: String,
    clusters: BTreeMap<u32, Cluster>,
    owner: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterFile {
    tile: String,
    point_count: u64,
    clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn new(tile: impl Into<String>, point_count: usize) -> Self {
        ClusterSet {
            tile: tile.into(),
            clusters: BTreeMap::new(),
            owner: vec![0; point_count],
        }
    }

    pub fn point_count(&self) -> usize {
        self.owner.len()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Add a cluster; fails if its id is taken, it is empty, it references
    /// points outside the tile or overlaps an existing cluster.
    pub fn insert(&mut self, cluster: Cluster) -> Result<()> {
        let what = || format!("cluster set {}", self.tile);
        if cluster.id == 0 {
            return Err(Error::malformed(what(), "cluster id 0 is reserved"));
        }
        if cluster.is_empty() {
            return Err(Error::EmptyCluster);
        }
        if self.clusters.contains_key(&cluster.id) {
            return Err(Error::malformed(what(), format!("duplicate cluster id {}", cluster.id)));
        }
        if !cluster.point_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::malformed(what(), format!("cluster {} indices not ascending/unique", cluster.id)));
        }
        if !cluster.contains(cluster.apex_index) {
            return Err(Error::malformed(what(), format!("cluster {} apex is not a member", cluster.id)));
        }
        for &i in &cluster.point_indices {
            match self.owner.get(i as usize) {
                None => {
                    return Err(Error::malformed(
                        what(),
                        format!("cluster {} references point {i} of {}", cluster.id, self.owner.len()),
                    ))
                }
                Some(&o) if o != 0 => {
                    return Err(Error::malformed(what(), format!("clusters {o} and {} share point {i}", cluster.id)))
                }
                _ => {}
            }
        }
        for &i in &cluster.point_indices {
            self.owner[i as usize] = cluster.id;
        }
        self.clusters.insert(cluster.id, cluster);
        Ok(())
    }

    pub fn get(&self, id: u32) -> Option<&Cluster> {
        self.clusters.get(&id)
    }

    /// Clusters in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Cluster> {
        self.clusters.values()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.clusters.keys().copied().collect()
    }

    /// Owning cluster of each point, 0 for none.
    pub fn owners(&self) -> &[u32] {
        &self.owner
    }

    pub fn owner_of(&self, point: usize) -> u32 {
        self.owner[point]
    }

    /// Keep only clusters for which `keep` holds.
    pub fn filtered(&self, mut keep: impl FnMut(&Cluster) -> bool) -> ClusterSet {
        let mut out = ClusterSet::new(self.tile.clone(), self.point_count());
        for c in self.iter().filter(|c| keep(c)) {
            out.insert(c.clone()).expect("subset of a valid set");
        }
        out
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = ClusterFile {
            tile: self.tile.clone(),
            point_count: self.owner.len() as u64,
            clusters: self.clusters.values().cloned().collect(),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: ClusterFile =
            serde_json::from_slice(bytes).map_err(|e| Error::malformed("cluster file", e.to_string()))?;
        let mut set = ClusterSet::new(file.tile, file.point_count as usize);
        for c in file.clusters {
            set.insert(c)?;
        }
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, &self.to_json()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_json(&bytes).map_err(|e| match e {
            Error::Malformed { detail, .. } => Error::malformed(path.display().to_string(), detail),
            other => other,
        })
    }
}

/// Write one `<tile>.json` per set into `dir`.
pub fn write_cluster_dir(dir: &Path, sets: &[ClusterSet]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for s in sets {
        s.write(&dir.join(format!("{}.json", s.tile)))?;
    }
    Ok(())
}

/// Read every `*.json` cluster file in `dir`, sorted by tile name.
pub fn read_cluster_dir(dir: &Path) -> Result<Vec<ClusterSet>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ClusterSet::read(p)).collect()
}
