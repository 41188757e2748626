//! Training loop and inference wrapper.

use arbor_core::config::RaterConfig;
use arbor_core::eval::ConfusionMatrix;
use arbor_core::pointcloud::PointCloud;
use arbor_core::rating::{RatingClass, RatingRecord};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::rotate_z;
use crate::error::{Error, Result};
use crate::kde::{kde_voxelize, VoxelGrid};
use crate::net::{backward, forward, update_running_stats, weighted_cross_entropy, Mode};
use crate::params::RaterParams;
use crate::real::Real;
use crate::weights::{class_name, class_weights};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const INFER_BATCH: usize = 32;

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam<T> {
    lr: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &RaterParams<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Adam {
            lr,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut RaterParams<T>, grads: &[Vec<T>]) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let (b1, b2) = (T::of(BETA1), T::of(BETA2));
        let (nb1, nb2) = (T::of(1.0 - BETA1), T::of(1.0 - BETA2));
        let lr = T::of(self.lr * c2.sqrt() / c1);
        let eps = T::of(ADAM_EPS * c2.sqrt());
        for (k, t) in params.tensors.iter_mut().enumerate() {
            if !t.trainable {
                continue;
            }
            let wd = T::of(if t.decayed { self.weight_decay } else { 0.0 });
            for j in 0..t.data.len() {
                let g = grads[k][j] + wd * t.data[j];
                self.m[k][j] = b1 * self.m[k][j] + nb1 * g;
                self.v[k][j] = b2 * self.v[k][j] + nb2 * g * g;
                t.data[j] -= lr * self.m[k][j] / (self.v[k][j].sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_weighted_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub class_weights: Vec<f64>,
    pub train_count: usize,
    pub validation_count: usize,
    /// Validation confusion of the kept parameters (rows = truth).
    pub confusion: Option<ConfusionMatrix>,
}

/// Seeded per-class split; each class gives `round(fraction * n)` examples
/// to validation, keeping at least one for training.
pub fn stratified_split(labels: &[RatingClass], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in RatingClass::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let nv = ((fraction * idx.len() as f64).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..nv]);
        train.extend_from_slice(&idx[nv..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn pack<T: Real>(grids: &[&VoxelGrid<f32>]) -> Vec<T> {
    grids.iter().flat_map(|g| g.values.iter().map(|&v| T::of(v as f64))).collect()
}

fn voxelize_all(clouds: &[PointCloud], cfg: &RaterConfig) -> Result<Vec<VoxelGrid<f32>>> {
    clouds.par_iter().map(|c| kde_voxelize(c, cfg.resolution, cfg.extent)).collect()
}

fn check_config(cfg: &RaterConfig) -> Result<()> {
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch_size must be at least 2 for batch normalization".into()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::Config(format!("validation_fraction {} outside [0, 1)", cfg.validation_fraction)));
    }
    if !(cfg.learning_rate > 0.0) || cfg.weight_decay < 0.0 || !(0.0..=1.0).contains(&cfg.bn_momentum) {
        return Err(Error::Config("learning rate, weight decay or momentum out of range".into()));
    }
    Ok(())
}

/// Train on labeled clusters with a stratified train/validation split.
/// Returns the parameters of the best validation epoch (the last epoch when
/// there is no validation split).
pub fn train_rater(examples: &[(&PointCloud, RatingClass)], cfg: &RaterConfig) -> Result<(Rater, TrainingReport)> {
    check_config(cfg)?;
    let labels: Vec<RatingClass> = examples.iter().map(|e| e.1).collect();
    let mut counts = [0usize; 3];
    labels.iter().for_each(|c| counts[c.index()] += 1);
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(class_name(i)));
    }
    if examples.iter().any(|e| e.0.is_empty()) {
        return Err(Error::EmptyCluster);
    }
    let (train_idx, val_idx) = stratified_split(&labels, cfg.validation_fraction, cfg.seed);
    let mut train_counts = [0usize; 3];
    train_idx.iter().for_each(|&i| train_counts[labels[i].index()] += 1);
    let weights = class_weights(&train_counts)?;
    info!(
        "training rater on {} clusters ({} validation), class weights {:.3?}",
        train_idx.len(),
        val_idx.len(),
        weights
    );

    let train_clouds: Vec<PointCloud> = train_idx.iter().map(|&i| examples[i].0.clone()).collect();
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i].index()).collect();
    let val_grids = voxelize_all(&val_idx.iter().map(|&i| examples[i].0.clone()).collect::<Vec<_>>(), cfg)?;
    let val_labels: Vec<RatingClass> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut params = RaterParams::<f32>::init(cfg, cfg.seed)?;
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.weight_decay);
    let fixed = if cfg.augment { None } else { Some(voxelize_all(&train_clouds, cfg)?) };

    let mut report = TrainingReport {
        epochs: Vec::new(),
        best_epoch: 0,
        class_weights: weights.clone(),
        train_count: train_idx.len(),
        validation_count: val_idx.len(),
        confusion: None,
    };
    let mut best: Option<((f64, f64), RaterParams<f32>, ConfusionMatrix)> = None;
    let mut last = params.clone();
    for epoch in 0..cfg.epochs {
        let rotated;
        let grids = match &fixed {
            Some(g) => g,
            None => {
                let angles: Vec<f64> = (0..train_clouds.len()).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                let clouds: Vec<PointCloud> = train_clouds.iter().zip(&angles).map(|(c, &a)| rotate_z(c, a)).collect();
                rotated = voxelize_all(&clouds, cfg)?;
                &rotated
            }
        };
        let mut order: Vec<usize> = (0..grids.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&VoxelGrid<f32>> = chunk.iter().map(|&i| &grids[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let pass = forward(&params, &pack::<f32>(&batch), chunk.len(), Mode::Train)?;
            let (loss, dlogits) = weighted_cross_entropy(&pass, &y, &weights);
            let grads = backward(&params, &pass, &dlogits);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                let max_abs = |v: &mut dyn Iterator<Item = f32>| v.map(|x| x.abs() as f64).fold(0.0, f64::max);
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: loss,
                    max_grad: max_abs(&mut grads.iter().flatten().copied()),
                    max_param: max_abs(&mut params.tensors.iter().flat_map(|t| t.data.iter().copied())),
                });
            }
            adam.step(&mut params, &grads);
            update_running_stats(&mut params, &pass, cfg.bn_momentum);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        let mut metrics = EpochMetrics {
            epoch,
            train_loss,
            val_accuracy: None,
            val_weighted_accuracy: None,
        };
        if !val_grids.is_empty() {
            let rater = Rater { params };
            let probs = rater.predict_grids(&val_grids.iter().collect::<Vec<_>>())?;
            params = rater.params;
            let confusion = ConfusionMatrix::from_pairs(val_labels.iter().zip(&probs).map(|(&t, p)| (t, argmax(p))));
            let (acc, wacc) = confusion.accuracy_metrics()?;
            metrics.val_accuracy = Some(acc);
            metrics.val_weighted_accuracy = Some(wacc);
            if best.as_ref().is_none_or(|b| (wacc, acc) > b.0) {
                best = Some(((wacc, acc), params.clone(), confusion));
                report.best_epoch = epoch;
            }
        } else {
            report.best_epoch = epoch;
            last = params.clone();
        }
        info!(
            "epoch {epoch}: loss {:.4}, validation accuracy {:?}, weighted {:?}",
            train_loss, metrics.val_accuracy, metrics.val_weighted_accuracy
        );
        report.epochs.push(metrics);
    }
    let params = match best {
        Some((_, p, confusion)) => {
            report.confusion = Some(confusion);
            p
        }
        None if cfg.epochs == 0 => params,
        None => last,
    };
    debug!("kept epoch {}", report.best_epoch);
    Ok((Rater { params }, report))
}

pub fn argmax(p: &[f32; 3]) -> RatingClass {
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    RatingClass::from_index(best).unwrap()
}

/// Trained classifier in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rater {
    pub params: RaterParams<f32>,
}

impl Rater {
    pub fn new(params: RaterParams<f32>) -> Self {
        Rater { params }
    }

    pub fn predict_grids(&self, grids: &[&VoxelGrid<f32>]) -> Result<Vec<[f32; 3]>> {
        let r = self.params.topology.resolution;
        if let Some(g) = grids.iter().find(|g| g.resolution != r) {
            return Err(Error::Shape(format!("grid of {}^3 for a {r}^3 network", g.resolution)));
        }
        let chunks: Vec<Vec<[f32; 3]>> = grids
            .par_chunks(INFER_BATCH)
            .map(|chunk| {
                let pass = forward(&self.params, &pack::<f32>(chunk), chunk.len(), Mode::Infer)?;
                Ok((0..chunk.len()).map(|i| pass.prob(i).try_into().unwrap()).collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Class probabilities per cluster, in input order.
    pub fn predict_many(&self, clouds: &[&PointCloud]) -> Result<Vec<[f32; 3]>> {
        let h = &self.params.hyper;
        let grids: Vec<VoxelGrid<f32>> =
            clouds.par_iter().map(|c| kde_voxelize(c, self.params.topology.resolution, h.extent)).collect::<Result<_>>()?;
        self.predict_grids(&grids.iter().collect::<Vec<_>>())
    }

    pub fn predict(&self, cloud: &PointCloud) -> Result<[f32; 3]> {
        Ok(self.predict_many(&[cloud])?[0])
    }

    /// Model rating: most probable class, softmax maximum as confidence.
    pub fn rate(&self, cluster_id: u32, cloud: &PointCloud) -> Result<RatingRecord> {
        let p = self.predict(cloud)?;
        let class = argmax(&p);
        Ok(RatingRecord::model(cluster_id, class, p[class.index()]))
    }

    pub fn confusion(&self, examples: &[(&PointCloud, RatingClass)]) -> Result<ConfusionMatrix> {
        let clouds: Vec<&PointCloud> = examples.iter().map(|e| e.0).collect();
        let probs = self.predict_many(&clouds)?;
        Ok(ConfusionMatrix::from_pairs(examples.iter().zip(&probs).map(|(e, p)| (e.1, argmax(p)))))
    }
}
