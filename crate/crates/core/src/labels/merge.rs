use std::collections::BTreeSet;

use super::LabelMap;
use crate::pointcloud::PointCloud;
use crate::watershed::Cluster;

/// Add an accepted candidate as a new instance and return its id.
///
/// Unclaimed candidate points go to the new instance. A point already owned
/// by another instance moves only if it is strictly closer (3D) to the
/// candidate centroid than to its owner's centroid; owner centroids are taken
/// before any reassignment. Every candidate point ends up Tree.
pub fn merge_candidate(candidate: &Cluster, labels: &mut LabelMap, cloud: &PointCloud) -> u32 {
    let owners: BTreeSet<u32> = candidate
        .point_indices
        .iter()
        .map(|&i| labels.instance_at(i as usize))
        .filter(|&id| id != 0)
        .collect();
    let centroids: std::collections::BTreeMap<u32, [f64; 3]> = labels
        .members_of(&owners)
        .into_iter()
        .map(|(id, m)| {
            let mut s = [0.0; 3];
            for &i in &m {
                let p = cloud.position(i as usize);
                s[0] += p[0];
                s[1] += p[1];
                s[2] += p[2];
            }
            let n = m.len() as f64;
            (id, [s[0] / n, s[1] / n, s[2] / n])
        })
        .collect();
    let d2 = |p: [f64; 3], c: [f64; 3]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);

    let new_id = labels.allocate_instance();
    for &i in &candidate.point_indices {
        let i = i as usize;
        let owner = labels.instance_at(i);
        if owner == 0 {
            labels.assign(i, new_id);
            continue;
        }
        let p = cloud.position(i);
        if d2(p, candidate.centroid) < d2(p, centroids[&owner]) {
            labels.assign(i, new_id);
        }
    }
    new_id
}
