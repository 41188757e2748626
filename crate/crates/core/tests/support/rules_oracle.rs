//! Brute-force evaluators for candidate acceptance and merging, and the
//! random small scenes they are compared on.

use std::collections::BTreeMap;

use arbor_core::labels::{AcceptRules, LabelMap, Semantic};
use arbor_core::pointcloud::PointCloud;
use arbor_core::watershed::{Cluster, ClusterSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Scene {
    pub cloud: PointCloud,
    pub labels: LabelMap,
    pub candidate: Cluster,
}

pub fn random_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(10..=200usize);
    let side = rng.random_range(1.0..6.0);
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side), rng.random_range(0.0..10.0)])
        .collect();
    let mut cloud = PointCloud::from_xyz(&pts);
    cloud.hag = pts.iter().map(|p| p[2] as f32).collect();
    let k = rng.random_range(0..=5u32);
    let mut labels = LabelMap::new("t", n);
    let ids: Vec<u32> = (0..k).map(|_| labels.allocate_instance()).collect();
    for i in 0..n {
        let r: f64 = rng.random();
        if !ids.is_empty() && r < 0.6 {
            labels.assign(i, ids[rng.random_range(0..ids.len())]);
        } else if r < 0.8 {
            labels.set_semantic(i, Semantic::Gray);
        }
    }
    // candidate: a dense sample of one instance (sometimes all of it) plus random others
    let target = if ids.is_empty() { None } else { Some(ids[rng.random_range(0..ids.len())]) };
    let p_target = [0.3, 0.8, 1.0][rng.random_range(0..3)];
    let p_other = rng.random_range(0.0..0.5);
    let mut members: Vec<u32> = (0..n as u32)
        .filter(|&i| {
            let own = labels.instance_at(i as usize);
            let p = if Some(own) == target && own != 0 { p_target } else { p_other };
            rng.random::<f64>() < p
        })
        .collect();
    if members.is_empty() {
        members.push(rng.random_range(0..n as u32));
    }
    let candidate = Cluster::new(999, members, &cloud, ClusterSource::Backend).unwrap();
    Scene { cloud, labels, candidate }
}

pub fn members(labels: &LabelMap) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for i in 0..labels.len() {
        let id = labels.instance_at(i);
        if id != 0 {
            m.entry(id).or_default().push(i);
        }
    }
    m
}

/// Failed test names per intersecting instance, computed pairwise and naively.
pub fn oracle_decision(s: &Scene, rules: &AcceptRules) -> Vec<(u32, &'static str)> {
    let c = &s.cloud;
    let cand: Vec<usize> = s.candidate.point_indices.iter().map(|&i| i as usize).collect();
    let highest = |set: &[usize]| {
        let mut best = set[0];
        for &i in set {
            if c.hag[i] > c.hag[best] || (c.hag[i] == c.hag[best] && i < best) {
                best = i;
            }
        }
        best
    };
    let cand_apex = highest(&cand);
    let mut out = Vec::new();
    for (id, inst) in members(&s.labels) {
        let inter: Vec<usize> = cand.iter().copied().filter(|i| inst.contains(i)).collect();
        if inter.is_empty() {
            continue;
        }
        let a = highest(&inst);
        let d = ((c.x[a] - c.x[cand_apex]).powi(2) + (c.y[a] - c.y[cand_apex]).powi(2) + (c.z[a] - c.z[cand_apex]).powi(2)).sqrt();
        if d <= rules.apex_tolerance {
            out.push((id, "tip"));
        }
        let mut diam = 0.0f64;
        for &p in &inter {
            for &q in &inter {
                diam = diam.max(((c.x[p] - c.x[q]).powi(2) + (c.y[p] - c.y[q]).powi(2)).sqrt());
            }
        }
        if diam > rules.overlap_threshold {
            out.push((id, "overlap"));
        }
        let ic = inter.len() as f64 / cand.len() as f64;
        let ie = inter.len() as f64 / inst.len() as f64;
        if ic >= rules.ioc_max || ie >= rules.ioc_max {
            out.push((id, "ioc"));
        }
    }
    out
}

pub fn oracle_merge(s: &Scene) -> Vec<u32> {
    let c = &s.cloud;
    let centroid = |set: &[usize]| {
        let n = set.len() as f64;
        let mut m = [0.0; 3];
        for &i in set {
            m[0] += c.x[i];
            m[1] += c.y[i];
            m[2] += c.z[i];
        }
        [m[0] / n, m[1] / n, m[2] / n]
    };
    let d2 = |i: usize, m: [f64; 3]| (c.x[i] - m[0]).powi(2) + (c.y[i] - m[1]).powi(2) + (c.z[i] - m[2]).powi(2);
    let old = members(&s.labels);
    let cand: Vec<usize> = s.candidate.point_indices.iter().map(|&i| i as usize).collect();
    let cc = centroid(&cand);
    let new_id = s.labels.next_instance();
    let mut owner: Vec<u32> = s.labels.instances().to_vec();
    for &i in &cand {
        let o = owner[i];
        if o == 0 || d2(i, cc) < d2(i, centroid(&old[&o])) {
            owner[i] = new_id;
        }
    }
    owner
}
