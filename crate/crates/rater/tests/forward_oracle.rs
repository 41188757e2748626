//! The network against a second, loop-based implementation of the same
//! topology.

use arbor_core::config::RaterConfig;
use arbor_rater::net::{forward, Mode};
use arbor_rater::params::RaterParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Act = (usize, usize, Vec<f64>); // channels, cube edge, values

fn tensor(p: &RaterParams<f64>, name: &str) -> Vec<f64> {
    p.get(name).unwrap().data.clone()
}

fn conv(x: &Act, w: &[f64], b: Option<&[f64]>, cout: usize, k: usize) -> Act {
    let (cin, d, ref v) = *x;
    let pad = (k / 2) as i64;
    let mut out = vec![0.0; cout * d * d * d];
    for co in 0..cout {
        for z in 0..d {
            for y in 0..d {
                for xx in 0..d {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let (iz, iy, ix) = (
                                        z as i64 + kz as i64 - pad,
                                        y as i64 + ky as i64 - pad,
                                        xx as i64 + kx as i64 - pad,
                                    );
                                    let dd = d as i64;
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= dd || iy >= dd || ix >= dd {
                                        continue;
                                    }
                                    let wi = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                                    let xi = ((ci * d + iz as usize) * d + iy as usize) * d + ix as usize;
                                    acc += w[wi] * v[xi];
                                }
                            }
                        }
                    }
                    out[((co * d + z) * d + y) * d + xx] = acc;
                }
            }
        }
    }
    (cout, d, out)
}

fn pool(x: &Act) -> Act {
    let (c, d, ref v) = *x;
    let od = d.div_ceil(2);
    let mut out = vec![f64::NEG_INFINITY; c * od * od * od];
    for ch in 0..c {
        for z in 0..d {
            for y in 0..d {
                for xx in 0..d {
                    let o = ((ch * od + z / 2) * od + y / 2) * od + xx / 2;
                    out[o] = out[o].max(v[((ch * d + z) * d + y) * d + xx]);
                }
            }
        }
    }
    (c, od, out)
}

fn relu(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

fn gap(x: &Act) -> Vec<f64> {
    let (c, d, ref v) = *x;
    let s = d * d * d;
    (0..c).map(|ch| v[ch * s..(ch + 1) * s].iter().sum::<f64>() / s as f64).collect()
}

fn fc(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter().enumerate().map(|(o, &bo)| bo + x.iter().enumerate().map(|(i, &xi)| w[o * x.len() + i] * xi).sum::<f64>()).collect()
}

/// Probabilities for every grid of the batch. In train mode batch norm uses
/// statistics pooled over the batch.
fn oracle(p: &RaterParams<f64>, grids: &[Vec<f64>], train: bool) -> Vec<Vec<f64>> {
    let t = &p.topology;
    let mut acts: Vec<Act> = grids.iter().map(|g| (1, t.resolution, g.clone())).collect();
    for (s, &c) in t.channels.iter().enumerate() {
        let w = tensor(p, &format!("stage{s}.conv.weight"));
        acts = acts.iter().map(|a| conv(a, &w, None, c, 3)).collect();
        let gamma = tensor(p, &format!("stage{s}.bn.gamma"));
        let beta = tensor(p, &format!("stage{s}.bn.beta"));
        let d = acts[0].1;
        let sp = d * d * d;
        for ch in 0..c {
            let (mean, var) = if train {
                let vals: Vec<f64> = acts.iter().flat_map(|a| a.2[ch * sp..(ch + 1) * sp].to_vec()).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                (m, vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
            } else {
                (
                    tensor(p, &format!("stage{s}.bn.running_mean"))[ch],
                    tensor(p, &format!("stage{s}.bn.running_var"))[ch],
                )
            };
            for a in acts.iter_mut() {
                for v in &mut a.2[ch * sp..(ch + 1) * sp] {
                    *v = gamma[ch] * (*v - mean) / (var + 1e-5).sqrt() + beta[ch];
                }
            }
        }
        acts = acts
            .into_iter()
            .map(|mut a| {
                relu(&mut a.2);
                pool(&a)
            })
            .collect();
    }
    acts.iter()
        .map(|f| {
            let mut u = conv(f, &tensor(p, "head_a.conv1.weight"), Some(&tensor(p, "head_a.conv1.bias")), t.head_channels, 3);
            relu(&mut u.2);
            let q = conv(&pool(&u), &tensor(p, "head_a.conv2.weight"), Some(&tensor(p, "head_a.conv2.bias")), 3, 1);
            let a = gap(&q);
            let mut h = fc(&gap(f), &tensor(p, "head_b.fc1.weight"), &tensor(p, "head_b.fc1.bias"));
            relu(&mut h);
            let b = fc(&h, &tensor(p, "head_b.fc2.weight"), &tensor(p, "head_b.fc2.bias"));
            let z: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Default topology with perturbed batch-norm parameters and biases so that
/// no tensor sits at its trivial initial value.
fn random_params(seed: u64) -> RaterParams<f64> {
    let mut p = RaterParams::<f64>::init(&RaterConfig::default(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in p.tensors.iter_mut() {
        if t.decayed {
            continue;
        }
        for v in t.data.iter_mut() {
            *v = if t.name.ends_with("running_var") || t.name.ends_with("gamma") {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(-0.3..0.3)
            };
        }
    }
    p
}

fn random_grid(rng: &mut ChaCha8Rng, r: usize) -> Vec<f64> {
    (0..r * r * r).map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..0.5) } else { 0.0 }).collect()
}

fn compare(p64: &RaterParams<f64>, grids: &[Vec<f64>], mode: Mode) {
    let want = oracle(p64, grids, mode == Mode::Train);
    let packed: Vec<f64> = grids.concat();
    let got64 = forward(p64, &packed, grids.len(), mode).unwrap();
    let p32 = p64.cast::<f32>();
    let packed32: Vec<f32> = packed.iter().map(|&v| v as f32).collect();
    let got32 = forward(&p32, &packed32, grids.len(), mode).unwrap();
    for (n, w) in want.iter().enumerate() {
        for k in 0..3 {
            assert!((got64.prob(n)[k] - w[k]).abs() < 1e-9, "f64 {mode:?} sample {n}: {:?} vs {w:?}", got64.prob(n));
            assert!((got32.prob(n)[k] as f64 - w[k]).abs() < 1e-5, "f32 {mode:?} sample {n}: {:?} vs {w:?}", got32.prob(n));
        }
        let s32: f32 = got32.prob(n).iter().sum();
        assert!((s32 - 1.0).abs() < 1e-6);
    }
}

#[test]
fn matches_loop_oracle_in_both_modes() {
    let p = random_params(11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grids: Vec<Vec<f64>> = (0..2).map(|_| random_grid(&mut rng, 32)).collect();
    compare(&p, &grids, Mode::Infer);
    compare(&p, &grids, Mode::Train);
}

#[test]
fn infer_mode_is_pure() {
    let p = RaterParams::<f32>::init(&RaterConfig::default(), 1).unwrap();
    let zero = vec![0.0f32; 32 * 32 * 32];
    let a = forward(&p, &zero, 1, Mode::Infer).unwrap();
    let b = forward(&p, &zero, 1, Mode::Infer).unwrap();
    assert_eq!(a.probs, b.probs);
    assert!(a.probs.iter().all(|&v| v > 0.0));
    assert!((a.probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
}

#[test]
fn wrong_input_size_is_a_shape_error() {
    let p = RaterParams::<f32>::init(&RaterConfig::default(), 1).unwrap();
    assert!(forward(&p, &vec![0.0f32; 16 * 16 * 16], 1, Mode::Infer).is_err());
}
