use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfuserKind, ConfuserSpec, SceneSpec, TreeSpec};
use crate::error::Result;
use crate::rating::RatingClass;
use crate::util::read_json;
use crate::watershed::{read_cluster_dir, Cluster, ClusterSet};

/// A cluster whose second-largest tree contributes at least this share of
/// the largest tree's points looks like several trees.
pub const MULTI_SHARE: f64 = 0.25;
/// A cluster with less than this share of tree points is not a tree.
pub const NONTREE_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub id: u32,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub radius: f64,
    pub points: usize,
}

impl ObjectTruth {
    pub(crate) fn tree(id: u32, t: &TreeSpec, points: usize) -> Self {
        ObjectTruth {
            id,
            kind: "tree".into(),
            x: t.x,
            y: t.y,
            height: t.height,
            radius: t.crown_radius,
            points,
        }
    }

    pub(crate) fn confuser(id: u32, c: &ConfuserSpec, points: usize) -> Self {
        ObjectTruth {
            id,
            kind: match c.kind {
                ConfuserKind::Rock => "rock".into(),
                ConfuserKind::Shrub => "shrub".into(),
            },
            x: c.x,
            y: c.y,
            height: c.height,
            radius: c.radius,
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileTruthEntry {
    pub tile: String,
    pub trees: usize,
    pub confusers: usize,
}

impl TileTruthEntry {
    pub(crate) fn new(tile: &str, trees: &ClusterSet, confusers: &ClusterSet) -> Self {
        TileTruthEntry {
            tile: tile.to_string(),
            trees: trees.len(),
            confusers: confusers.len(),
        }
    }
}

/// Contents of `scene_truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    pub points: usize,
    pub trees: Vec<ObjectTruth>,
    pub confusers: Vec<ObjectTruth>,
    pub tiles: Vec<TileTruthEntry>,
}

/// Per-tile truth: tree instances and confuser objects as cluster sets over
/// the tile's points.
#[derive(Debug, Clone)]
pub struct TileTruth {
    pub trees: ClusterSet,
    pub confusers: ClusterSet,
}

impl TileTruth {
    pub fn tile(&self) -> &str {
        &self.trees.tile
    }

    /// What a careful operator would answer for `cluster`: NonTree when tree
    /// points are a minority, Multi when a second tree is substantial,
    /// otherwise Single.
    pub fn rate(&self, cluster: &Cluster) -> RatingClass {
        rate_by_owner(&cluster.point_indices, self.trees.owners())
    }
}

pub(crate) fn rate_by_owner(members: &[u32], tree_owner: &[u32]) -> RatingClass {
    let mut counts: std::collections::BTreeMap<u32, usize> = Default::default();
    for &i in members {
        let t = tree_owner[i as usize];
        if t != 0 {
            *counts.entry(t).or_default() += 1;
        }
    }
    let tree_points: usize = counts.values().sum();
    if (tree_points as f64) < NONTREE_SHARE * members.len() as f64 {
        return RatingClass::NonTree;
    }
    let mut sizes: Vec<usize> = counts.into_values().collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    if sizes.len() >= 2 && sizes[1] as f64 >= MULTI_SHARE * sizes[0] as f64 {
        RatingClass::Multi
    } else {
        RatingClass::Single
    }
}

/// Load `<dir>/scene_truth.json` and the per-tile truth cluster sets.
pub fn read_scene_truth(dir: &Path) -> Result<(SceneTruth, Vec<TileTruth>)> {
    let summary: SceneTruth = read_json(&dir.join("scene_truth.json"))?;
    let trees = read_cluster_dir(&dir.join("truth").join("clusters"))?;
    let confusers = read_cluster_dir(&dir.join("truth").join("confusers"))?;
    let tiles = trees
        .into_iter()
        .zip(confusers)
        .map(|(trees, confusers)| TileTruth { trees, confusers })
        .collect();
    Ok((summary, tiles))
}
