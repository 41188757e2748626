//! Forward and backward passes of the voxel network.
//!
//! Encoder: per stage conv3d(k3, pad 1, no bias) -> batch norm -> ReLU ->
//! max pool (2, ceil). Head A: conv(k3) -> ReLU -> max pool -> conv(k1) to
//! class scores -> global average. Head B: global average of the encoder
//! output -> dense -> ReLU -> dense. Logits are the sum of both heads.
//!
//! Activations are `[batch, channel, z, y, x]`, contiguous.

use crate::error::{Error, Result};
use crate::params::{slot, RaterParams, Topology};
use crate::real::Real;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

struct StageCache<T> {
    input: Vec<T>,
    d: usize,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    act: Vec<T>,
    argmax: Vec<u32>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

struct HeadCache<T> {
    /// Encoder output and its cube edge.
    f: Vec<T>,
    d: usize,
    u: Vec<T>,
    argmax: Vec<u32>,
    v: Vec<T>,
    dv: usize,
    g: Vec<T>,
    h: Vec<T>,
}

/// Result of a forward pass; holds what the backward pass needs.
pub struct Pass<T> {
    pub batch: usize,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    stages: Vec<StageCache<T>>,
    head: HeadCache<T>,
}

impl<T: Real> Pass<T> {
    pub fn prob(&self, n: usize) -> &[T] {
        &self.probs[n * 3..n * 3 + 3]
    }

    /// Per stage (batch mean, unbiased batch variance) per channel.
    pub fn batch_stats(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.stages.iter().map(|s| (s.batch_mean.as_slice(), s.batch_var.as_slice()))
    }
}

fn im2col<T: Real>(src: &[T], c: usize, d: usize, k: usize, col: &mut [T]) {
    let s = d * d * d;
    let pad = (k / 2) as isize;
    let di = d as isize;
    for ci in 0..c {
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let out = &mut col[row * s..(row + 1) * s];
                    for z in 0..d {
                        let iz = z as isize + kz as isize - pad;
                        for y in 0..d {
                            let iy = y as isize + ky as isize - pad;
                            let o = (z * d + y) * d;
                            if iz < 0 || iz >= di || iy < 0 || iy >= di {
                                out[o..o + d].fill(T::zero());
                                continue;
                            }
                            let base = ci * s + ((iz * di + iy) * di) as usize;
                            for x in 0..d {
                                let ix = x as isize + kx as isize - pad;
                                out[o + x] = if ix < 0 || ix >= di { T::zero() } else { src[base + ix as usize] };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], c: usize, d: usize, k: usize, dx: &mut [T]) {
    let s = d * d * d;
    let pad = (k / 2) as isize;
    let di = d as isize;
    for ci in 0..c {
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let src = &col[row * s..(row + 1) * s];
                    for z in 0..d {
                        let iz = z as isize + kz as isize - pad;
                        if iz < 0 || iz >= di {
                            continue;
                        }
                        for y in 0..d {
                            let iy = y as isize + ky as isize - pad;
                            if iy < 0 || iy >= di {
                                continue;
                            }
                            let o = (z * d + y) * d;
                            let base = ci * s + ((iz * di + iy) * di) as usize;
                            for x in 0..d {
                                let ix = x as isize + kx as isize - pad;
                                if ix >= 0 && ix < di {
                                    dx[base + ix as usize] += src[o + x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Same-size convolution of `n` samples; weights `[cout, cin, k, k, k]`.
#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Real>(x: &[T], n: usize, cin: usize, d: usize, w: &[T], bias: Option<&[T]>, cout: usize, k: usize) -> Vec<T> {
    let s = d * d * d;
    let kk = cin * k * k * k;
    let mut out = vec![T::zero(); n * cout * s];
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kk * s] };
    for i in 0..n {
        let xi = &x[i * cin * s..(i + 1) * cin * s];
        let oi = &mut out[i * cout * s..(i + 1) * cout * s];
        let b = if k == 1 {
            xi
        } else {
            im2col(xi, cin, d, k, &mut col);
            &col
        };
        T::gemm(cout, kk, s, T::one(), w, false, b, false, T::zero(), oi);
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                oi[co * s..(co + 1) * s].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Accumulates weight (and bias) gradients; returns the input gradient when
/// asked for.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    d: usize,
    w: &[T],
    cout: usize,
    k: usize,
    dout: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let s = d * d * d;
    let kk = cin * k * k * k;
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kk * s] };
    let mut dcol = vec![T::zero(); if want_dx && k != 1 { kk * s } else { 0 }];
    let mut dx = if want_dx { vec![T::zero(); n * cin * s] } else { Vec::new() };
    for i in 0..n {
        let xi = &x[i * cin * s..(i + 1) * cin * s];
        let gi = &dout[i * cout * s..(i + 1) * cout * s];
        let b = if k == 1 {
            xi
        } else {
            im2col(xi, cin, d, k, &mut col);
            &col
        };
        T::gemm(cout, s, kk, T::one(), gi, false, b, true, T::one(), dw);
        if want_dx {
            let dxi = &mut dx[i * cin * s..(i + 1) * cin * s];
            if k == 1 {
                T::gemm(kk, cout, s, T::one(), w, true, gi, false, T::one(), dxi);
            } else {
                T::gemm(kk, cout, s, T::one(), w, true, gi, false, T::zero(), &mut dcol);
                col2im(&dcol, cin, d, k, dxi);
            }
        }
    }
    if let Some(db) = db {
        for i in 0..n {
            for (co, g) in db.iter_mut().enumerate() {
                let base = (i * cout + co) * s;
                *g += dout[base..base + s].iter().copied().sum::<T>();
            }
        }
    }
    want_dx.then_some(dx)
}

/// 2x2x2 max pool with ceil rounding; ties go to the first voxel in
/// z, y, x order. Returns output and the input index of each maximum.
fn maxpool<T: Real>(src: &[T], nc: usize, d: usize) -> (Vec<T>, Vec<u32>, usize) {
    let od = d.div_ceil(2);
    let (s, os) = (d * d * d, od * od * od);
    let mut out = Vec::with_capacity(nc * os);
    let mut arg = Vec::with_capacity(nc * os);
    for c in 0..nc {
        let base = c * s;
        for oz in 0..od {
            for oy in 0..od {
                for ox in 0..od {
                    let mut best = usize::MAX;
                    for z in 2 * oz..(2 * oz + 2).min(d) {
                        for y in 2 * oy..(2 * oy + 2).min(d) {
                            for x in 2 * ox..(2 * ox + 2).min(d) {
                                let j = base + (z * d + y) * d + x;
                                if best == usize::MAX || src[j] > src[best] {
                                    best = j;
                                }
                            }
                        }
                    }
                    out.push(src[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    (out, arg, od)
}

fn unpool<T: Real>(dout: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &j) in dout.iter().zip(argmax) {
        dx[j as usize] += g;
    }
    dx
}

fn global_mean<T: Real>(x: &[T], nc: usize, s: usize) -> Vec<T> {
    let inv = T::of(1.0 / s as f64);
    (0..nc).map(|c| x[c * s..(c + 1) * s].iter().copied().sum::<T>() * inv).collect()
}

/// `y[n, o] = sum_i w[o, i] x[n, i] + b[o]`.
fn dense<T: Real>(x: &[T], n: usize, fin: usize, w: &[T], b: &[T], fout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * fout];
    T::gemm(n, fin, fout, T::one(), x, false, w, true, T::zero(), &mut y);
    for row in y.chunks_mut(fout) {
        row.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv);
    }
    y
}

fn relu_inplace<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

fn check_input<T: Real>(topology: &Topology, input: &[T], n: usize) -> Result<()> {
    let want = n * topology.resolution.pow(3);
    if n == 0 || input.len() != want {
        return Err(Error::Shape(format!(
            "input of {} values for {n} grids of {}^3",
            input.len(),
            topology.resolution
        )));
    }
    Ok(())
}

/// Forward pass over `n` grids packed back to back in `input`.
pub fn forward<T: Real>(params: &RaterParams<T>, input: &[T], n: usize, mode: Mode) -> Result<Pass<T>> {
    let t = &params.topology;
    check_input(t, input, n)?;
    let mut x = input.to_vec();
    let mut d = t.resolution;
    let mut stages = Vec::with_capacity(t.stages());
    for (si, &c) in t.channels.iter().enumerate() {
        let cin = t.in_channels(si);
        let s = d * d * d;
        let mut y = conv_forward(&x, n, cin, d, params.data(slot::conv(si)), None, c, 3);
        let gamma = params.data(slot::gamma(si));
        let beta = params.data(slot::beta(si));
        let mut xhat = vec![T::zero(); y.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut batch_mean = vec![0.0; c];
        let mut batch_var = vec![0.0; c];
        let m = (n * s) as f64;
        for ch in 0..c {
            let blocks = (0..n).map(|i| (i * c + ch) * s);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for b in blocks.clone() {
                        sum += y[b..b + s].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    let mean = sum / m;
                    let mut sq = 0.0;
                    for b in blocks.clone() {
                        sq += y[b..b + s].iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>();
                    }
                    batch_mean[ch] = mean;
                    batch_var[ch] = if m > 1.0 { sq / (m - 1.0) } else { 0.0 };
                    (mean, sq / m)
                }
                Mode::Infer => (params.data(slot::mean(si))[ch].f64(), params.data(slot::var(si))[ch].f64()),
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = T::of(is);
            let (mt, it) = (T::of(mean), T::of(is));
            for b in blocks {
                for j in b..b + s {
                    let h = (y[j] - mt) * it;
                    xhat[j] = h;
                    y[j] = gamma[ch] * h + beta[ch];
                }
            }
        }
        relu_inplace(&mut y);
        let (pooled, argmax, od) = maxpool(&y, n * c, d);
        stages.push(StageCache {
            input: std::mem::replace(&mut x, pooled),
            d,
            xhat,
            inv_std,
            act: y,
            argmax,
            batch_mean,
            batch_var,
        });
        d = od;
    }

    let (f, hc, mh, k) = (t.features(), t.head_channels, t.mlp_hidden, t.classes);
    let s = d * d * d;
    let head = |i| params.data(slot::head(t.stages(), i));
    // branch A
    let mut u = conv_forward(&x, n, f, d, head(0), Some(head(1)), hc, 3);
    relu_inplace(&mut u);
    let (v, argmax, dv) = maxpool(&u, n * hc, d);
    let q = conv_forward(&v, n, hc, dv, head(2), Some(head(3)), k, 1);
    let logits_a = global_mean(&q, n * k, dv * dv * dv);
    // branch B
    let g = global_mean(&x, n * f, s);
    let mut h = dense(&g, n, f, head(4), head(5), mh);
    relu_inplace(&mut h);
    let logits_b = dense(&h, n, mh, head(6), head(7), k);

    let logits: Vec<T> = logits_a.iter().zip(&logits_b).map(|(&a, &b)| a + b).collect();
    let probs = softmax(&logits, k);
    Ok(Pass {
        batch: n,
        logits,
        probs,
        stages,
        head: HeadCache {
            f: x,
            d,
            u,
            argmax,
            v,
            dv,
            g,
            h,
        },
    })
}

/// Row-wise softmax.
pub fn softmax<T: Real>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / z));
    }
    out
}

/// Gradients of every tensor (zeros for running statistics) given the
/// gradient of the loss with respect to the logits.
pub fn backward<T: Real>(params: &RaterParams<T>, pass: &Pass<T>, dlogits: &[T]) -> Vec<Vec<T>> {
    let t = &params.topology;
    let n = pass.batch;
    let mut grads: Vec<Vec<T>> = params.tensors.iter().map(|x| vec![T::zero(); x.data.len()]).collect();
    let (f, hc, mh, k) = (t.features(), t.head_channels, t.mlp_hidden, t.classes);
    let hs = |i| slot::head(t.stages(), i);
    let hd = &pass.head;
    let s = hd.d * hd.d * hd.d;

    // branch B
    let db2: Vec<T> = (0..k).map(|j| (0..n).map(|i| dlogits[i * k + j]).sum()).collect();
    T::gemm(k, n, mh, T::one(), dlogits, true, &hd.h, false, T::zero(), &mut grads[hs(6)]);
    grads[hs(7)] = db2;
    let mut dh = vec![T::zero(); n * mh];
    T::gemm(n, k, mh, T::one(), dlogits, false, params.data(hs(6)), false, T::zero(), &mut dh);
    dh.iter_mut().zip(&hd.h).for_each(|(g, &a)| {
        if a <= T::zero() {
            *g = T::zero()
        }
    });
    grads[hs(5)] = (0..mh).map(|j| (0..n).map(|i| dh[i * mh + j]).sum()).collect();
    T::gemm(mh, n, f, T::one(), &dh, true, &hd.g, false, T::zero(), &mut grads[hs(4)]);
    let mut dgap = vec![T::zero(); n * f];
    T::gemm(n, mh, f, T::one(), &dh, false, params.data(hs(4)), false, T::zero(), &mut dgap);
    let inv_s = T::of(1.0 / s as f64);
    let mut df: Vec<T> = (0..n * f * s).map(|j| dgap[j / s] * inv_s).collect();

    // branch A
    let sv = hd.dv * hd.dv * hd.dv;
    let inv_sv = T::of(1.0 / sv as f64);
    let dq: Vec<T> = (0..n * k * sv).map(|j| dlogits[j / sv] * inv_sv).collect();
    let (mut gw, mut gb) = (vec![T::zero(); k * hc], vec![T::zero(); k]);
    let dv = conv_backward(&hd.v, n, hc, hd.dv, params.data(hs(2)), k, 1, &dq, &mut gw, Some(&mut gb), true).unwrap();
    grads[hs(2)] = gw;
    grads[hs(3)] = gb;
    let mut du = unpool(&dv, &hd.argmax, hd.u.len());
    du.iter_mut().zip(&hd.u).for_each(|(g, &a)| {
        if a <= T::zero() {
            *g = T::zero()
        }
    });
    let (mut gw, mut gb) = (vec![T::zero(); hc * f * 27], vec![T::zero(); hc]);
    let dfa = conv_backward(&hd.f, n, f, hd.d, params.data(hs(0)), hc, 3, &du, &mut gw, Some(&mut gb), true).unwrap();
    grads[hs(0)] = gw;
    grads[hs(1)] = gb;
    df.iter_mut().zip(&dfa).for_each(|(a, &b)| *a += b);

    // encoder, last stage first
    let mut dout = df;
    for si in (0..t.stages()).rev() {
        let st = &pass.stages[si];
        let c = t.channels[si];
        let cin = t.in_channels(si);
        let ss = st.d * st.d * st.d;
        let mut dy = unpool(&dout, &st.argmax, st.act.len());
        dy.iter_mut().zip(&st.act).for_each(|(g, &a)| {
            if a <= T::zero() {
                *g = T::zero()
            }
        });
        let gamma = params.data(slot::gamma(si));
        let m = (n * ss) as f64;
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mut sdy, mut sdyx) = (0.0, 0.0);
            for i in 0..n {
                let b = (i * c + ch) * ss;
                for j in b..b + ss {
                    sdy += dy[j].f64();
                    sdyx += (dy[j] * st.xhat[j]).f64();
                }
            }
            dgamma[ch] = T::of(sdyx);
            dbeta[ch] = T::of(sdy);
            let scale = gamma[ch] * st.inv_std[ch];
            let (mdy, mdyx) = (T::of(sdy / m), T::of(sdyx / m));
            for i in 0..n {
                let b = (i * c + ch) * ss;
                for j in b..b + ss {
                    dy[j] = scale * (dy[j] - mdy - st.xhat[j] * mdyx);
                }
            }
        }
        grads[slot::gamma(si)] = dgamma;
        grads[slot::beta(si)] = dbeta;
        let mut gw = vec![T::zero(); params.data(slot::conv(si)).len()];
        let dx = conv_backward(&st.input, n, cin, st.d, params.data(slot::conv(si)), c, 3, &dy, &mut gw, None, si > 0);
        grads[slot::conv(si)] = gw;
        match dx {
            Some(dx) => dout = dx,
            None => break,
        }
    }
    grads
}

/// Class-weighted mean cross entropy and its logit gradient.
pub fn weighted_cross_entropy<T: Real>(pass: &Pass<T>, labels: &[usize], weights: &[f64]) -> (f64, Vec<T>) {
    let k = 3;
    let total: f64 = labels.iter().map(|&y| weights[y]).sum();
    let mut loss = 0.0;
    let mut dlogits = vec![T::zero(); pass.batch * k];
    for (i, &y) in labels.iter().enumerate() {
        let row = &pass.logits[i * k..i * k + k];
        let m = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v.f64() - m).exp()).sum::<f64>().ln();
        let w = weights[y] / total;
        loss += w * (lse - row[y].f64());
        for j in 0..k {
            let p = (row[j].f64() - lse).exp();
            let onehot = if j == y { 1.0 } else { 0.0 };
            dlogits[i * k + j] = T::of(w * (p - onehot));
        }
    }
    (loss, dlogits)
}

/// Exponential moving average of the batch statistics of a training pass.
pub fn update_running_stats<T: Real>(params: &mut RaterParams<T>, pass: &Pass<T>, momentum: f64) {
    for (si, (mean, var)) in pass.batch_stats().enumerate() {
        for (slot_id, batch) in [(slot::mean(si), mean), (slot::var(si), var)] {
            for (r, &b) in params.tensors[slot_id].data.iter_mut().zip(batch) {
                *r = T::of((1.0 - momentum) * r.f64() + momentum * b);
            }
        }
    }
}
