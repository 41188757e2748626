use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{Cluster, ClusterSet, ClusterSource};
use crate::pointcloud::{Raster, Tile};

#[derive(PartialEq)]
struct Level(f32);

impl Eq for Level {}

impl PartialOrd for Level {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Level {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Marker-controlled watershed on the inverted CHM.
///
/// Regions grow from the seeds by priority flood: the highest queued cell is
/// expanded first (first-queued first among equal heights) and claims every
/// unlabeled 8-neighbour at or above `background`. Points with
/// `hag >= background` in a labeled cell join that region's cluster. Empty
/// regions are dropped; the remaining clusters are numbered from `first_id`
/// in seed order.
pub fn watershed_clusters(
    tile: &Tile,
    chm: &Raster,
    seeds: &[(usize, usize)],
    background: f64,
    first_id: u32,
) -> ClusterSet {
    let (w, h) = (chm.width, chm.height);
    let mut label = vec![0u32; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (k, &(c, r)) in seeds.iter().enumerate() {
        let cell = r * w + c;
        if label[cell] != 0 {
            continue;
        }
        label[cell] = k as u32 + 1;
        heap.push((Level(chm.values[cell]), Reverse(seq), cell));
        seq += 1;
    }
    while let Some((_, _, cell)) = heap.pop() {
        let (col, row) = ((cell % w) as isize, (cell / w) as isize);
        for (dc, dr) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
            let (nc, nr) = (col + dc, row + dr);
            if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                continue;
            }
            let n = nr as usize * w + nc as usize;
            if label[n] != 0 || (chm.values[n] as f64) < background {
                continue;
            }
            label[n] = label[cell];
            heap.push((Level(chm.values[n]), Reverse(seq), n));
            seq += 1;
        }
    }

    let mut members: Vec<Vec<u32>> = vec![Vec::new(); seeds.len()];
    let cloud = &tile.cloud;
    for i in 0..cloud.len() {
        if (cloud.hag[i] as f64) < background {
            continue;
        }
        if let Some((c, r)) = chm.cell_of(cloud.x[i], cloud.y[i]) {
            let l = label[r * w + c];
            if l != 0 {
                members[l as usize - 1].push(i as u32);
            }
        }
    }

    let mut set = ClusterSet::new(tile.name(), cloud.len());
    let mut next = first_id;
    for m in members.into_iter().filter(|m| !m.is_empty()) {
        let cluster = Cluster::new(next, m, cloud, ClusterSource::Watershed).expect("non-empty");
        set.insert(cluster).expect("regions are disjoint");
        next += 1;
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{rasterize_chm, PointCloud};
    use crate::watershed::{detect_maxima, segment_tile, smooth_chm, WatershedParams};
    use rand::{Rng, SeedableRng};

    /// Cone crowns on flat ground at 38 pt/m2; returns the tile and each
    /// point's generating cone (0 = ground).
    fn cone_scene(cones: &[(f64, f64, f64, f64)], seed: u64) -> (Tile, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = PointCloud::new();
        let mut truth = Vec::new();
        let n = (40.0 * 40.0 * 38.0) as usize;
        for _ in 0..n {
            let (x, y) = (rng.random_range(0.0..40.0), rng.random_range(0.0..40.0));
            let mut best = (0.0, 0);
            for (k, &(cx, cy, apex, radius)) in cones.iter().enumerate() {
                let d = (x - cx).hypot(y - cy);
                let z = apex * (1.0 - d / radius);
                if d < radius && z > best.0 {
                    best = (z, k + 1);
                }
            }
            cloud.x.push(x);
            cloud.y.push(y);
            cloud.z.push(best.0);
            cloud.hag.push(best.0 as f32);
            truth.push(best.1);
        }
        (Tile::new(0, 0, 0.0, 0.0, 40.0, cloud), truth)
    }

    #[test]
    fn single_cone_single_cluster() {
        let (tile, truth) = cone_scene(&[(20.0, 20.0, 10.0, 4.0)], 1);
        let set = segment_tile(&tile, &WatershedParams::default(), 1).unwrap();
        assert_eq!(set.len(), 1);
        let cl = set.iter().next().unwrap();
        let cone: Vec<usize> = (0..tile.len()).filter(|&i| truth[i] == 1 && tile.cloud.hag[i] >= 0.5).collect();
        let inside = cone.iter().filter(|&&i| cl.contains(i as u32)).count();
        assert!(inside as f64 >= 0.95 * cone.len() as f64, "{inside}/{}", cone.len());
    }

    #[test]
    fn separated_cones_do_not_share_points() {
        let (tile, _) = cone_scene(&[(12.0, 20.0, 10.0, 4.0), (28.0, 20.0, 12.0, 4.0)], 2);
        let set = segment_tile(&tile, &WatershedParams::default(), 1).unwrap();
        assert_eq!(set.len(), 2);
        let mut seen = vec![0; tile.len()];
        for c in set.iter() {
            for &i in &c.point_indices {
                seen[i as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s <= 1));
        for i in 0..tile.len() {
            let o = set.owner_of(i);
            assert!(o == 0 || set.get(o).unwrap().contains(i as u32));
        }
    }

    #[test]
    fn cone_chm_peak_matches_apex() {
        let (tile, _) = cone_scene(&[(20.0, 20.0, 10.0, 4.0)], 5);
        let m = rasterize_chm(&tile, 0.5).max_value();
        assert!((9.5..=10.0).contains(&m), "{m}");
    }

    #[test]
    fn no_seeds_no_clusters() {
        let (tile, _) = cone_scene(&[(20.0, 20.0, 10.0, 4.0)], 3);
        let chm = rasterize_chm(&tile, 0.5);
        let set = watershed_clusters(&tile, &chm, &[], 0.5, 1);
        assert!(set.is_empty());
        assert!(set.owners().iter().all(|&o| o == 0));
    }

    #[test]
    fn deterministic_and_bounded_by_seeds() {
        let (tile, _) = cone_scene(&[(8.0, 8.0, 9.0, 3.5), (14.0, 9.0, 7.0, 3.0), (30.0, 30.0, 15.0, 5.0)], 4);
        let chm = smooth_chm(&rasterize_chm(&tile, 0.5), 1.0);
        let seeds = detect_maxima(&chm, 2.0, 2.0).unwrap();
        let a = watershed_clusters(&tile, &chm, &seeds, 0.5, 100);
        let b = watershed_clusters(&tile, &chm, &seeds, 0.5, 100);
        assert_eq!(a, b);
        assert!(a.len() <= seeds.len());
        assert_eq!(a.ids().first(), Some(&100));
    }
}
