#![allow(dead_code)]

use std::path::{Path, PathBuf};

use arbor_core::config::Config;
use arbor_core::pointcloud::{Tile, TileStore};
use arbor_core::rating::{RatingLine, RatingStore};
use arbor_core::synth::{generate_forest, read_scene_truth, write_scene, SceneSpec, TileTruth};
use arbor_core::watershed::{write_cluster_dir, ClusterSet};
use arbor_pipeline::{segment_tiles, simulate_ratings, RunDir, RunInputs};

pub struct Scenario {
    pub inputs: RunInputs,
    pub tiles: Vec<Tile>,
    pub truth: Vec<TileTruth>,
    pub initial: Vec<ClusterSet>,
}

/// Scene on disk, watershed clusters, and simulated operator ratings of
/// `sample` of them (all when `None`) in `<root>/<run>/ratings.jsonl`.
pub fn scenario(root: &Path, spec: &SceneSpec, cfg: &Config, runs: &[&str], sample: Option<usize>) -> Scenario {
    let scene = generate_forest(spec).unwrap();
    write_scene(&root.join("scene"), &scene, cfg.tiling.tile_size, "local").unwrap();
    let (_, truth) = read_scene_truth(&root.join("scene")).unwrap();
    let tiles = TileStore::new(root.join("scene/tiles")).read_all().unwrap();
    let initial = segment_tiles(&tiles, &cfg.watershed).unwrap();
    write_cluster_dir(&root.join("clusters"), &initial).unwrap();
    let ratings = simulate_ratings(&initial, &truth, sample, 1);
    for run in runs {
        let mut store = RatingStore::open(RunDir::new(root.join(run)).ratings_path()).unwrap();
        for r in &ratings {
            store.append(RatingLine::Rating(r.clone())).unwrap();
        }
    }
    Scenario {
        inputs: RunInputs {
            tiles: root.join("scene/tiles"),
            clusters: root.join("clusters"),
            rater: None,
        },
        tiles,
        truth,
        initial,
    }
}

pub fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
