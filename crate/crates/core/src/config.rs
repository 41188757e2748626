//! Run configuration: every tunable default in one tree, loadable from JSON
//! and overridable with `dotted.key=value` pairs. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::labels::AcceptRules;
use crate::util::{read_json, write_json_atomic};
use crate::watershed::WatershedParams;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub tiling: TilingConfig,
    pub watershed: WatershedParams,
    pub rater: RaterConfig,
    pub labels: AcceptRules,
    pub backend: BackendConfig,
    #[serde(rename = "loop")]
    pub run: LoopConfig,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingConfig {
    /// Tile edge length, meters.
    pub tile_size: f64,
    /// Ground raster cell, meters.
    pub ground_cell: f64,
    pub crs: String,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            tile_size: 100.0,
            ground_cell: 2.0,
            crs: "unknown".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaterConfig {
    /// Voxels per axis.
    pub resolution: usize,
    /// Edge length of the voxel cube, meters.
    pub extent: f64,
    /// Output channels of the five encoder stages.
    pub channels: Vec<usize>,
    pub head_channels: usize,
    pub mlp_hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub bn_momentum: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for RaterConfig {
    fn default() -> Self {
        RaterConfig {
            resolution: 32,
            extent: 20.0,
            channels: vec![8, 16, 32, 64, 128],
            head_channels: 32,
            mlp_hidden: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 16,
            epochs: 30,
            validation_fraction: 0.2,
            bn_momentum: 0.1,
            augment: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    /// External process template; `None` selects the built-in backend.
    /// Placeholders: {tiles} {labels} {out} {epochs} {seed}.
    pub command: Option<String>,
    pub timeout_secs: u64,
    /// Epochs for the first fit on the initial labels.
    pub initial_epochs: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub threshold: f64,
    /// Seeds are height maxima within this horizontal radius, meters.
    pub seed_radius: f64,
    /// Weight of horizontal distance added to 3D distance during growth.
    pub horizontal_penalty: f64,
    pub min_cluster_points: usize,
    /// Groups whose seed is lower than this, meters above ground, are dropped.
    pub min_seed_height: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            command: None,
            timeout_secs: 3600,
            initial_epochs: 20,
            hidden: 16,
            learning_rate: 1e-2,
            batch_size: 256,
            threshold: 0.5,
            seed_radius: 1.0,
            horizontal_penalty: 4.0,
            min_cluster_points: 10,
            min_seed_height: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    /// Backend epochs per loop iteration.
    pub epochs_per_iteration: usize,
    pub max_iterations: usize,
    /// Stop once new instances fall below `max(stop_min_new, stop_fraction * total)`
    /// for `stop_patience` consecutive iterations.
    pub stop_min_new: usize,
    pub stop_fraction: f64,
    pub stop_patience: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            epochs_per_iteration: 3,
            max_iterations: 9,
            stop_min_new: 5,
            stop_fraction: 0.01,
            stop_patience: 2,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub port: u16,
    /// Seed of the cluster presentation order.
    pub sample_seed: u64,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            port: 8080,
            sample_seed: 1,
            static_dir: None,
        }
    }
}

impl Config {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    /// Apply `key.path=value` overrides. Values parse as JSON when possible,
    /// otherwise they are taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override `{o}` is not key=value")))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut tree;
            let parts: Vec<&str> = key.split('.').collect();
            for (k, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| Error::InvalidArgument(format!("override `{key}`: `{part}` is not a section")))?;
                if k + 1 == parts.len() {
                    obj.insert(part.to_string(), value.clone());
                    break;
                }
                node = obj
                    .get_mut(*part)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown config section `{part}`")))?;
            }
        }
        serde_json::from_value(tree).map_err(|e| Error::InvalidArgument(format!("config override rejected: {e}")))
    }
}
