//! Named tensor store for the voxel network.

use arbor_core::config::RaterConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub const CLASSES: usize = 3;
const STAGE_TENSORS: usize = 5;
const HEAD_TENSORS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub resolution: usize,
    /// Output channels per encoder stage (conv + batch norm + ReLU + pool).
    pub channels: Vec<usize>,
    pub head_channels: usize,
    pub mlp_hidden: usize,
    pub classes: usize,
}

impl Topology {
    pub fn from_config(cfg: &RaterConfig) -> Self {
        Topology {
            resolution: cfg.resolution,
            channels: cfg.channels.clone(),
            head_channels: cfg.head_channels,
            mlp_hidden: cfg.mlp_hidden,
            classes: CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!("degenerate topology {self:?}")));
        }
        if self.head_channels == 0 || self.mlp_hidden == 0 || self.classes != CLASSES {
            return Err(Error::Config(format!("degenerate head in {self:?}")));
        }
        Ok(())
    }

    /// Cube edge after `stage` pooling steps (ceil division).
    pub fn dim_after(&self, stages: usize) -> usize {
        (0..stages).fold(self.resolution, |d, _| d.div_ceil(2))
    }

    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    pub fn in_channels(&self, stage: usize) -> usize {
        if stage == 0 {
            1
        } else {
            self.channels[stage - 1]
        }
    }

    pub fn features(&self) -> usize {
        *self.channels.last().unwrap()
    }

    /// (name, dims, trainable, decayed) of every tensor in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, bool, bool)> {
        let mut out = Vec::new();
        for (s, &c) in self.channels.iter().enumerate() {
            let cin = self.in_channels(s);
            out.push((format!("stage{s}.conv.weight"), vec![c, cin, 3, 3, 3], true, true));
            out.push((format!("stage{s}.bn.gamma"), vec![c], true, false));
            out.push((format!("stage{s}.bn.beta"), vec![c], true, false));
            out.push((format!("stage{s}.bn.running_mean"), vec![c], false, false));
            out.push((format!("stage{s}.bn.running_var"), vec![c], false, false));
        }
        let (f, h, m, k) = (self.features(), self.head_channels, self.mlp_hidden, self.classes);
        out.push(("head_a.conv1.weight".into(), vec![h, f, 3, 3, 3], true, true));
        out.push(("head_a.conv1.bias".into(), vec![h], true, false));
        out.push(("head_a.conv2.weight".into(), vec![k, h, 1, 1, 1], true, true));
        out.push(("head_a.conv2.bias".into(), vec![k], true, false));
        out.push(("head_b.fc1.weight".into(), vec![m, f], true, true));
        out.push(("head_b.fc1.bias".into(), vec![m], true, false));
        out.push(("head_b.fc2.weight".into(), vec![k, m], true, true));
        out.push(("head_b.fc2.bias".into(), vec![k], true, false));
        out
    }
}

/// Slot of each tensor inside `RaterParams::tensors`.
pub(crate) mod slot {
    use super::{HEAD_TENSORS, STAGE_TENSORS};

    pub fn conv(s: usize) -> usize {
        s * STAGE_TENSORS
    }
    pub fn gamma(s: usize) -> usize {
        s * STAGE_TENSORS + 1
    }
    pub fn beta(s: usize) -> usize {
        s * STAGE_TENSORS + 2
    }
    pub fn mean(s: usize) -> usize {
        s * STAGE_TENSORS + 3
    }
    pub fn var(s: usize) -> usize {
        s * STAGE_TENSORS + 4
    }
    /// Head tensors in layout order: a.conv1 w/b, a.conv2 w/b, b.fc1 w/b, b.fc2 w/b.
    pub fn head(stages: usize, k: usize) -> usize {
        debug_assert!(k < HEAD_TENSORS);
        stages * STAGE_TENSORS + k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
    pub trainable: bool,
    /// Subject to weight decay.
    pub decayed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaterParams<T = f32> {
    pub topology: Topology,
    /// Hyperparameters the parameters were trained with.
    pub hyper: RaterConfig,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> RaterParams<T> {
    /// He-normal conv and dense weights, zero biases, unit batch-norm scale,
    /// running statistics at (0, 1).
    pub fn init(cfg: &RaterConfig, seed: u64) -> Result<Self> {
        let topology = Topology::from_config(cfg);
        topology.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = topology
            .layout()
            .into_iter()
            .map(|(name, dims, trainable, decayed)| {
                let n: usize = dims.iter().product();
                let data = if decayed {
                    let fan_in: usize = dims[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                    (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
                } else if name.ends_with("gamma") || name.ends_with("running_var") {
                    vec![T::one(); n]
                } else {
                    vec![T::zero(); n]
                };
                Tensor {
                    name,
                    dims,
                    data,
                    trainable,
                    decayed,
                }
            })
            .collect();
        Ok(RaterParams {
            topology,
            hyper: cfg.clone(),
            tensors,
        })
    }

    /// Assemble from loaded tensors, checking names and shapes against the
    /// topology.
    pub fn from_tensors(topology: Topology, hyper: RaterConfig, loaded: Vec<(String, Vec<usize>, Vec<T>)>) -> Result<Self> {
        topology.validate()?;
        let layout = topology.layout();
        if loaded.len() != layout.len() {
            return Err(Error::Shape(format!("{} tensors, topology needs {}", loaded.len(), layout.len())));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for ((name, dims, trainable, decayed), (lname, ldims, data)) in layout.into_iter().zip(loaded) {
            if name != lname || dims != ldims {
                return Err(Error::Shape(format!("expected {name} {dims:?}, found {lname} {ldims:?}")));
            }
            if data.len() != dims.iter().product::<usize>() {
                return Err(Error::Shape(format!("{name}: {} values for {dims:?}", data.len())));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("{name} holds non-finite values")));
            }
            tensors.push(Tensor {
                name,
                dims,
                data,
                trainable,
                decayed,
            });
        }
        Ok(RaterParams {
            topology,
            hyper,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub(crate) fn data(&self, slot: usize) -> &[T] {
        &self.tensors[slot].data
    }

    pub fn cast<U: Real>(&self) -> RaterParams<U> {
        RaterParams {
            topology: self.topology.clone(),
            hyper: self.hyper.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    dims: t.dims.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                    trainable: t.trainable,
                    decayed: t.decayed,
                })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.trainable).map(|t| t.data.len()).sum()
    }
}
