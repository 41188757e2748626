use rayon::prelude::*;

use super::features::PointFeatures;
use super::scorer::Scorer;
use crate::config::BackendConfig;
use crate::pointcloud::{GridIndex, Tile};
use crate::watershed::{Cluster, ClusterSet, ClusterSource};

/// Group tree points into instances.
///
/// Seeds are tree points with the greatest height above ground within
/// `seed_radius` horizontally (ties to the lower index). Every tree point
/// then joins the seed minimising 3D distance plus `horizontal_penalty`
/// times horizontal distance. Groups smaller than `min_cluster_points` or
/// seeded below `min_seed_height` are dropped. Ids are assigned from
/// `first_id` in seed index order.
pub fn extract_instances(tile: &Tile, tree: &[bool], cfg: &BackendConfig, first_id: u32) -> ClusterSet {
    let c = &tile.cloud;
    let mut set = ClusterSet::new(tile.name(), c.len());
    let members: Vec<usize> = (0..c.len()).filter(|&i| tree[i]).collect();
    if members.is_empty() {
        return set;
    }
    let xs: Vec<f64> = members.iter().map(|&i| c.x[i]).collect();
    let ys: Vec<f64> = members.iter().map(|&i| c.y[i]).collect();
    let hs: Vec<f32> = members.iter().map(|&i| c.hag[i]).collect();
    let index = GridIndex::build(&xs, &ys, cfg.seed_radius.max(0.5));
    let r2 = cfg.seed_radius * cfg.seed_radius;
    let seeds: Vec<usize> = (0..members.len())
        .into_par_iter()
        .filter(|&a| {
            let mut top = true;
            index.for_each_candidate(xs[a], ys[a], cfg.seed_radius, |b| {
                if b != a
                    && (xs[b] - xs[a]).powi(2) + (ys[b] - ys[a]).powi(2) <= r2
                    && (hs[b] > hs[a] || (hs[b] == hs[a] && b < a))
                {
                    top = false;
                }
            });
            top
        })
        .collect();

    let sx: Vec<f64> = seeds.iter().map(|&s| xs[s]).collect();
    let sy: Vec<f64> = seeds.iter().map(|&s| ys[s]).collect();
    let seed_index = GridIndex::build(&sx, &sy, 4.0);
    let search = 4.0 * cfg.seed_radius.max(1.0);
    let cost = |a: usize, k: usize| {
        let s = seeds[k];
        let dh = (xs[a] - xs[s]).hypot(ys[a] - ys[s]);
        let dz = (hs[a] - hs[s]) as f64;
        (dh * dh + dz * dz).sqrt() + cfg.horizontal_penalty * dh
    };
    let owner: Vec<usize> = (0..members.len())
        .into_par_iter()
        .map(|a| {
            let mut best = (f64::INFINITY, usize::MAX);
            seed_index.for_each_candidate(xs[a], ys[a], search, |k| {
                let v = (cost(a, k), k);
                if v < best {
                    best = v;
                }
            });
            if best.1 == usize::MAX {
                for k in 0..seeds.len() {
                    let v = (cost(a, k), k);
                    if v < best {
                        best = v;
                    }
                }
            }
            best.1
        })
        .collect();

    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); seeds.len()];
    for (a, &k) in owner.iter().enumerate() {
        groups[k].push(members[a] as u32);
    }
    let mut id = first_id;
    for (k, g) in groups.into_iter().enumerate() {
        if g.len() >= cfg.min_cluster_points && hs[seeds[k]] as f64 >= cfg.min_seed_height {
            let cluster = Cluster::new(id, g, c, ClusterSource::Backend).expect("non-empty group");
            set.insert(cluster).expect("groups are disjoint");
            id += 1;
        }
    }
    set
}

/// Threshold the scorer and group the tree points of one tile.
pub fn predict_instances(tile: &Tile, features: &PointFeatures, scorer: &Scorer, cfg: &BackendConfig, first_id: u32) -> ClusterSet {
    let tree: Vec<bool> = scorer.probabilities(features).iter().map(|&p| p > cfg.threshold).collect();
    extract_instances(tile, &tree, cfg, first_id)
}
