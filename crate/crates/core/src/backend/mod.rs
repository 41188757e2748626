//! Segmentation backends: the trainable reference backend (point features,
//! a small per-point tree scorer, geometric instance grouping) and the
//! external-process protocol for heavier models.

mod external;
mod features;
mod predict;
mod scorer;

pub use external::{invoke_external, BackendJob, JobKind, JobOutcome};
pub use features::{covariance_eigenvalues, eigen_features, extract_features, PointFeatures, FEATURE_COUNT, NEIGHBORS};
pub use predict::{extract_instances, predict_instances};
pub use scorer::{label_weight, Scorer};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;

use crate::config::BackendConfig;
use crate::error::{Error, IoContext, Result};
use crate::labels::{write_label_dir, LabelMap};
use crate::pointcloud::Tile;
use crate::util::{read_json, write_json_atomic};
use crate::watershed::ClusterSet;

/// What the loop needs from a segmentation model.
pub trait SegmentationBackend {
    /// Fit on pseudo labels for `epochs` more epochs; returns per-epoch loss
    /// when known.
    fn train(&mut self, tiles: &[Tile], labels: &[LabelMap], epochs: usize, seed: u64) -> Result<Vec<f64>>;
    /// Instance hypotheses per tile, in tile order.
    fn predict(&mut self, tiles: &[Tile], seed: u64) -> Result<Vec<ClusterSet>>;
    fn save(&self, dir: &Path) -> Result<()>;
    fn load(&mut self, dir: &Path) -> Result<()>;
}

const REFERENCE_STATE: &str = "backend.json";

pub struct ReferenceBackend {
    pub cfg: BackendConfig,
    pub scorer: Scorer,
    features: BTreeMap<String, PointFeatures>,
}

impl ReferenceBackend {
    pub fn new(cfg: BackendConfig, seed: u64) -> Self {
        let scorer = Scorer::new(cfg.hidden, seed);
        ReferenceBackend {
            cfg,
            scorer,
            features: BTreeMap::new(),
        }
    }

    /// Features per tile, computed once and cached by tile name.
    pub fn features(&mut self, tiles: &[Tile]) -> Vec<&PointFeatures> {
        let missing: Vec<&Tile> = tiles.iter().filter(|t| !self.features.contains_key(&t.name())).collect();
        let fresh: Vec<(String, PointFeatures)> = missing.par_iter().map(|t| (t.name(), extract_features(t))).collect();
        self.features.extend(fresh);
        tiles.iter().map(|t| &self.features[&t.name()]).collect()
    }
}

impl SegmentationBackend for ReferenceBackend {
    fn train(&mut self, tiles: &[Tile], labels: &[LabelMap], epochs: usize, seed: u64) -> Result<Vec<f64>> {
        if tiles.len() != labels.len() {
            return Err(Error::InvalidArgument("labels do not cover the tiles".into()));
        }
        self.features(tiles);
        let data: Vec<(&PointFeatures, &LabelMap)> = tiles.iter().zip(labels).map(|(t, l)| (&self.features[&t.name()], l)).collect();
        let (batch, lr) = (self.cfg.batch_size, self.cfg.learning_rate);
        self.scorer.train(&data, epochs, batch, lr, seed)
    }

    fn predict(&mut self, tiles: &[Tile], _seed: u64) -> Result<Vec<ClusterSet>> {
        self.features(tiles);
        let (scorer, cfg, feats) = (&self.scorer, &self.cfg, &self.features);
        Ok(tiles
            .par_iter()
            .map(|t| predict_instances(t, &feats[&t.name()], scorer, cfg, 1))
            .collect())
    }

    fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        write_json_atomic(&dir.join(REFERENCE_STATE), &self.scorer)
    }

    fn load(&mut self, dir: &Path) -> Result<()> {
        self.scorer = read_json(&dir.join(REFERENCE_STATE))?;
        Ok(())
    }
}

/// Backend living in another process, driven through [`invoke_external`].
pub struct ExternalBackend {
    pub command: String,
    pub timeout: Duration,
    /// Tile store the external process reads.
    pub tiles_dir: PathBuf,
    /// Scratch space for job inputs and outputs.
    pub work_dir: PathBuf,
}

impl SegmentationBackend for ExternalBackend {
    fn train(&mut self, _tiles: &[Tile], labels: &[LabelMap], epochs: usize, seed: u64) -> Result<Vec<f64>> {
        let label_dir = self.work_dir.join("train_labels");
        write_label_dir(&label_dir, labels, 0, "loop")?;
        let job = BackendJob {
            kind: JobKind::Train,
            tiles: self.tiles_dir.clone(),
            labels: Some(label_dir),
            epochs,
            out: self.work_dir.join("train_out"),
            seed,
        };
        invoke_external(&job, &self.command, self.timeout)?;
        Ok(Vec::new())
    }

    fn predict(&mut self, tiles: &[Tile], seed: u64) -> Result<Vec<ClusterSet>> {
        let job = BackendJob {
            kind: JobKind::Predict,
            tiles: self.tiles_dir.clone(),
            labels: None,
            epochs: 0,
            out: self.work_dir.join("predict_out"),
            seed,
        };
        let outcome = invoke_external(&job, &self.command, self.timeout)?;
        tiles
            .iter()
            .map(|t| {
                outcome
                    .clusters
                    .iter()
                    .find(|s| s.tile == t.name())
                    .cloned()
                    .ok_or_else(|| Error::Backend(format!("malformed output: no clusters for tile {}", t.name())))
            })
            .collect()
    }

    fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        write_json_atomic(&dir.join("external.json"), &serde_json::json!({ "command": self.command }))
    }

    fn load(&mut self, _dir: &Path) -> Result<()> {
        Ok(())
    }
}
