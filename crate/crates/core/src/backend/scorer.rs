use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{PointFeatures, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::labels::{LabelMap, Semantic};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Two-layer perceptron giving P(tree) per point, with its Adam state so
/// that fine-tuning resumes exactly.
///
/// Parameter layout: `w1[hidden][FEATURE_COUNT] | b1[hidden] | w2[hidden] | b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub hidden: usize,
    pub theta: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// Loss weight of a semantic label; Gray carries none.
pub fn label_weight(s: Semantic) -> f64 {
    match s {
        Semantic::Ground | Semantic::Tree => 1.0,
        Semantic::Gray => 0.0,
    }
}

fn target(s: Semantic) -> f64 {
    if s == Semantic::Tree {
        1.0
    } else {
        0.0
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Scorer {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Self::param_count(hidden);
        let mut theta = vec![0.0; n];
        let a1 = (6.0 / (FEATURE_COUNT + hidden) as f64).sqrt();
        for w in &mut theta[..hidden * FEATURE_COUNT] {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let w2 = hidden * FEATURE_COUNT + hidden;
        for w in &mut theta[w2..w2 + hidden] {
            *w = rng.random_range(-a2..a2);
        }
        Scorer {
            hidden,
            theta,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn param_count(hidden: usize) -> usize {
        hidden * FEATURE_COUNT + 2 * hidden + 1
    }

    /// Hidden activations and the logit.
    fn hidden_and_logit(&self, x: &[f64; FEATURE_COUNT], h: &mut [f64]) -> f64 {
        let hdim = self.hidden;
        let (w1, rest) = self.theta.split_at(hdim * FEATURE_COUNT);
        let (b1, rest) = rest.split_at(hdim);
        let (w2, b2) = rest.split_at(hdim);
        let mut z = b2[0];
        for j in 0..hdim {
            let row = &w1[j * FEATURE_COUNT..(j + 1) * FEATURE_COUNT];
            let a: f64 = b1[j] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
            h[j] = a.tanh();
            z += w2[j] * h[j];
        }
        z
    }

    pub fn logit(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.hidden_and_logit(x, &mut h)
    }

    pub fn probability(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        1.0 / (1.0 + (-self.logit(x)).exp())
    }

    pub fn probabilities(&self, f: &PointFeatures) -> Vec<f64> {
        (0..f.len()).map(|i| self.probability(&f.input(i))).collect()
    }

    /// Accumulate `w * d(bce)/d(theta)` into `grad`; returns `w * bce`.
    fn accumulate(&self, x: &[f64; FEATURE_COUNT], y: f64, w: f64, grad: &mut [f64], h: &mut [f64]) -> f64 {
        let hdim = self.hidden;
        let z = self.hidden_and_logit(x, h);
        let p = 1.0 / (1.0 + (-z).exp());
        let dz = w * (p - y);
        let w2_off = hdim * FEATURE_COUNT + hdim;
        for j in 0..hdim {
            let da = dz * self.theta[w2_off + j] * (1.0 - h[j] * h[j]);
            for k in 0..FEATURE_COUNT {
                grad[j * FEATURE_COUNT + k] += da * x[k];
            }
            grad[hdim * FEATURE_COUNT + j] += da;
            grad[w2_off + j] += dz * h[j];
        }
        grad[w2_off + hdim] += dz;
        w * (softplus(z) - y * z)
    }

    /// Weighted mean binary cross-entropy over all points of all tiles.
    pub fn loss(&self, data: &[(&PointFeatures, &LabelMap)]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        let (mut num, mut den) = (0.0, 0.0);
        for (f, l) in data {
            for i in 0..f.len() {
                let s = l.semantic_at(i);
                let w = label_weight(s);
                if w == 0.0 {
                    continue;
                }
                let z = self.hidden_and_logit(&f.input(i), &mut h);
                num += w * (softplus(z) - target(s) * z);
                den += w;
            }
        }
        num / den
    }

    /// Full-data gradient of [`Scorer::loss`].
    pub fn gradient(&self, data: &[(&PointFeatures, &LabelMap)]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        let mut g = vec![0.0; self.theta.len()];
        let mut den = 0.0;
        for (f, l) in data {
            for i in 0..f.len() {
                let s = l.semantic_at(i);
                let w = label_weight(s);
                if w != 0.0 {
                    self.accumulate(&f.input(i), target(s), w, &mut g, &mut h);
                    den += w;
                }
            }
        }
        g.iter_mut().for_each(|v| *v /= den);
        g
    }

    fn adam(&mut self, g: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for k in 0..self.theta.len() {
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g[k];
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g[k] * g[k];
            self.theta[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + EPS);
        }
    }

    /// Minibatch Adam over the supervised points. Returns the mean training
    /// loss of each epoch.
    pub fn train(
        &mut self,
        data: &[(&PointFeatures, &LabelMap)],
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let mut order: Vec<(u32, u32)> = Vec::new();
        for (t, (f, l)) in data.iter().enumerate() {
            if f.len() != l.len() {
                return Err(Error::InvalidArgument(format!("tile {}: features and labels differ in length", l.tile)));
            }
            for i in 0..f.len() {
                if label_weight(l.semantic_at(i)) > 0.0 {
                    order.push((t as u32, i as u32));
                }
            }
        }
        if order.is_empty() {
            return Err(Error::NoSupervisedPoints);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = vec![0.0; self.hidden];
        let mut g = vec![0.0; self.theta.len()];
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(batch_size.max(1)) {
                g.iter_mut().for_each(|v| *v = 0.0);
                let mut den = 0.0;
                for &(t, i) in batch {
                    let (f, l) = data[t as usize];
                    let s = l.semantic_at(i as usize);
                    let w = label_weight(s);
                    total += self.accumulate(&f.input(i as usize), target(s), w, &mut g, &mut h);
                    den += w;
                }
                g.iter_mut().for_each(|v| *v /= den);
                self.adam(&g, learning_rate);
            }
            let mean = total / order.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Backend(format!("non-finite training loss {mean}")));
            }
            losses.push(mean);
        }
        Ok(losses)
    }
}
