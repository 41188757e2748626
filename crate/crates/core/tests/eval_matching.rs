//! Greedy instance matching against exhaustive assignment on small scenes.

use std::collections::BTreeMap;

use arbor_core::eval::{count_report, match_instances, pairwise_iou, ConfusionMatrix};
use arbor_core::pointcloud::PointCloud;
use arbor_core::rating::RatingClass;
use arbor_core::watershed::{Cluster, ClusterSet, ClusterSource};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Segments of a 1D point row; predictions are jittered, sometimes split or
/// merged, sometimes missing.
fn scene(seed: u64) -> (ClusterSet, ClusterSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_gt = rng.random_range(1..=6usize);
    let mut cuts: Vec<u32> = vec![0];
    for _ in 0..n_gt {
        let last = *cuts.last().unwrap();
        cuts.push(last + rng.random_range(5..40));
    }
    let n = *cuts.last().unwrap() as usize + 10;
    let cloud = PointCloud::from_xyz(&vec![[0.0; 3]; n]);
    let mut gt = ClusterSet::new("t", n);
    for k in 0..n_gt {
        gt.insert(Cluster::new(k as u32 + 1, (cuts[k]..cuts[k + 1]).collect(), &cloud, ClusterSource::Truth).unwrap()).unwrap();
    }
    let jitter = if rng.random_bool(0.3) { 0 } else { 6 };
    let mut pcuts: Vec<u32> = cuts
        .iter()
        .map(|&c| (c as i64 + rng.random_range(-jitter..=jitter)).clamp(0, n as i64) as u32)
        .collect();
    if rng.random_bool(0.3) {
        let extra = rng.random_range(0..n as u32);
        pcuts.push(extra);
    }
    if pcuts.len() > 3 && rng.random_bool(0.3) {
        let k = rng.random_range(1..pcuts.len() - 1);
        pcuts.remove(k);
    }
    pcuts.sort_unstable();
    pcuts.dedup();
    let mut pred = ClusterSet::new("t", n);
    let mut id = 1;
    for w in pcuts.windows(2) {
        if w[1] > w[0] && !rng.random_bool(0.1) {
            pred.insert(Cluster::new(id, (w[0]..w[1]).collect(), &cloud, ClusterSource::Backend).unwrap()).unwrap();
            id += 1;
        }
    }
    (gt, pred)
}

/// Best total IoU over all one-to-one assignments.
fn optimal_total(gt: &ClusterSet, pred: &ClusterSet) -> f64 {
    let iou = pairwise_iou(gt, pred);
    let g = gt.ids();
    let p = pred.ids();
    fn rec(k: usize, g: &[u32], p: &[u32], used: &mut Vec<bool>, iou: &BTreeMap<(u32, u32), f64>) -> f64 {
        if k == g.len() {
            return 0.0;
        }
        let mut best = rec(k + 1, g, p, used, iou);
        for j in 0..p.len() {
            if !used[j] {
                used[j] = true;
                let v = iou.get(&(g[k], p[j])).copied().unwrap_or(0.0) + rec(k + 1, g, p, used, iou);
                used[j] = false;
                best = best.max(v);
            }
        }
        best
    }
    rec(0, &g, &p, &mut vec![false; p.len()], &iou)
}

/// Greedy is a 1/2-approximation in the worst case (a merged prediction
/// straddling two trees can grab the larger one and strand the smaller
/// match), so the 10% bound is checked in aggregate and on nearly all scenes.
#[test]
fn greedy_close_to_optimal() {
    let mut identical = 0;
    let mut within = 0;
    let (mut sum_greedy, mut sum_best) = (0.0, 0.0);
    let scenes = 500;
    for seed in 0..scenes {
        let (gt, pred) = scene(seed);
        let r = match_instances(&gt, &pred);
        let greedy: f64 = r.pairs.iter().map(|p| p.iou).sum();
        let best = optimal_total(&gt, &pred);
        assert!(greedy <= best + 1e-12);
        assert!(greedy >= 0.5 * best - 1e-12, "seed {seed}: greedy {greedy}, optimal {best}");
        if greedy >= 0.9 * best - 1e-12 {
            within += 1;
        }
        sum_greedy += greedy;
        sum_best += best;
        // unambiguous scenes: each gt overlaps at most one prediction and vice versa
        let iou = pairwise_iou(&gt, &pred);
        let mut deg_g: BTreeMap<u32, usize> = BTreeMap::new();
        let mut deg_p: BTreeMap<u32, usize> = BTreeMap::new();
        for &(g, p) in iou.keys() {
            *deg_g.entry(g).or_default() += 1;
            *deg_p.entry(p).or_default() += 1;
        }
        if deg_g.values().chain(deg_p.values()).all(|&d| d == 1) {
            assert!((greedy - best).abs() < 1e-12);
            identical += 1;
        }
    }
    assert!(identical > 10, "{identical}");
    assert!(sum_greedy >= 0.9 * sum_best);
    assert!(within as f64 >= 0.95 * scenes as f64, "{within} of {scenes}");
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(seed in any::<u64>()) {
        let (gt, pred) = scene(seed);
        let ab = pairwise_iou(&gt, &pred);
        let ba = pairwise_iou(&pred, &gt);
        for (&(g, p), &v) in &ab {
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(ba[&(p, g)], v);
        }
        let r = match_instances(&gt, &pred);
        prop_assert_eq!(r.pairs.len(), gt.len());
        let mut used: Vec<u32> = r.pairs.iter().filter_map(|p| p.pred).collect();
        let n = used.len();
        used.sort_unstable();
        used.dedup();
        prop_assert_eq!(used.len(), n);
    }

    #[test]
    fn rating_filter_never_adds(seed in any::<u64>(), classes in prop::collection::vec(0usize..3, 0..12)) {
        let (gt, pred) = scene(seed);
        let ratings: BTreeMap<u32, RatingClass> = pred
            .ids()
            .into_iter()
            .zip(classes.iter().map(|&c| RatingClass::from_index(c).unwrap()))
            .collect();
        let row = count_report("any", &pred, &ratings, &gt);
        prop_assert!(row.predicted <= row.unfiltered);
    }

    #[test]
    fn accuracy_in_unit_interval(cells in prop::array::uniform9(0u64..20)) {
        let mut cm = ConfusionMatrix::default();
        for (k, &c) in cells.iter().enumerate() {
            cm.counts[k / 3][k % 3] = c;
        }
        if cm.total() > 0 {
            let (a, w) = cm.accuracy_metrics().unwrap();
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&w));
            let rows: Vec<u64> = (0..3).map(|i| cm.counts[i].iter().sum()).collect();
            if rows.iter().all(|&r| r == rows[0]) {
                prop_assert!((a - w).abs() < 1e-12);
            }
        }
    }
}
