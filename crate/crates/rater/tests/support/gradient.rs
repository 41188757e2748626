//! Central finite differences against the analytic gradients of a reduced
//! two-stage topology in double precision.

use arbor_core::config::RaterConfig;
use arbor_rater::net::{backward, forward, weighted_cross_entropy, Mode};
use arbor_rater::params::RaterParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;

pub fn reduced() -> RaterConfig {
    RaterConfig {
        resolution: 4,
        channels: vec![2, 3],
        head_channels: 3,
        mlp_hidden: 4,
        ..RaterConfig::default()
    }
}

fn loss(p: &RaterParams<f64>, input: &[f64], labels: &[usize], w: &[f64]) -> f64 {
    let pass = forward(p, input, labels.len(), Mode::Train).unwrap();
    weighted_cross_entropy(&pass, labels, w).0
}

/// Worst per-tensor relative error `|g - fd| / max(|g|, |fd|)` (vector norms).
pub fn worst_relative_error(seed: u64) -> Vec<(String, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = RaterParams::<f64>::init(&reduced(), seed).unwrap();
    for t in p.tensors.iter_mut().filter(|t| t.trainable && !t.decayed) {
        t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
    }
    let labels = [0usize, 1, 2, 1];
    let weights = [1.2, 0.7, 1.1];
    let input: Vec<f64> = (0..labels.len() * 64).map(|_| rng.random_range(0.0..1.0)).collect();
    let pass = forward(&p, &input, labels.len(), Mode::Train).unwrap();
    let (_, dlogits) = weighted_cross_entropy(&pass, &labels, &weights);
    let grads = backward(&p, &pass, &dlogits);
    let mut out = Vec::new();
    for k in 0..p.tensors.len() {
        if !p.tensors[k].trainable {
            continue;
        }
        let (mut diff, mut na, mut nf) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..p.tensors[k].data.len() {
            let orig = p.tensors[k].data[j];
            p.tensors[k].data[j] = orig + EPS;
            let up = loss(&p, &input, &labels, &weights);
            p.tensors[k].data[j] = orig - EPS;
            let down = loss(&p, &input, &labels, &weights);
            p.tensors[k].data[j] = orig;
            let fd = (up - down) / (2.0 * EPS);
            diff += (fd - grads[k][j]).powi(2);
            na += grads[k][j].powi(2);
            nf += fd * fd;
        }
        let denom = na.sqrt().max(nf.sqrt()).max(1e-12);
        out.push((p.tensors[k].name.clone(), diff.sqrt() / denom, na.sqrt()));
    }
    out
}
