use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian, random_confuser, random_tree, ConfuserKind, Footprints, Object, SceneSpec};
use crate::pointcloud::PointCloud;
use crate::rating::{RatingClass, RatingRecord};

/// Points below this height are dropped, as the initializer would.
const MIN_HAG: f64 = 0.5;
const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    /// Samples per class, indexed by `RatingClass::index`.
    pub counts: [usize; 3],
    /// Geometry ranges, density, noise and seed.
    pub geometry: SceneSpec,
    /// Probability that a rock stands in for a NonTree sample (else shrubs).
    pub rock_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            counts: [100, 100, 100],
            geometry: SceneSpec {
                height: (4.0, 22.0),
                ..SceneSpec::default()
            },
            rock_fraction: 0.4,
        }
    }
}

/// One labeled cluster in local coordinates: XY around the origin, z equal
/// to height above ground.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub id: u32,
    pub class: RatingClass,
    pub points: PointCloud,
    /// Tree tops (empty for NonTree).
    pub apexes: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingCorpus {
    pub samples: Vec<CorpusSample>,
}

impl RatingCorpus {
    /// Exact labels as human rating records.
    pub fn records(&self) -> Vec<RatingRecord> {
        self.samples.iter().map(|s| RatingRecord::human(s.id, s.class, 0)).collect()
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.samples {
            c[s.class.index()] += 1;
        }
        c
    }
}

/// `n_per_class` samples of each class.
pub fn generate_rating_corpus(n_per_class: usize, seed: u64) -> RatingCorpus {
    let mut spec = CorpusSpec {
        counts: [n_per_class; 3],
        ..CorpusSpec::default()
    };
    spec.geometry.seed = seed;
    generate_rating_corpus_with(&spec)
}

/// Single = one crown; Multi = two or three overlapping crowns with tops more
/// than a meter apart; NonTree = a rock or a patch of shrubs.
pub fn generate_rating_corpus_with(spec: &CorpusSpec) -> RatingCorpus {
    let g = &spec.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut plan: Vec<RatingClass> = RatingClass::ALL
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, spec.counts[c.index()]))
        .collect();
    plan.shuffle(&mut rng);
    let samples = plan
        .into_iter()
        .enumerate()
        .map(|(k, class)| loop {
            let objects = match class {
                RatingClass::Single => vec![Object::Tree(random_tree(&mut rng, g, 0.0, 0.0))],
                RatingClass::Multi => multi_objects(&mut rng, g),
                RatingClass::NonTree => non_tree_objects(&mut rng, g, spec.rock_fraction),
            };
            let points = sample_objects(&objects, g, &mut rng);
            if points.len() >= MIN_POINTS {
                let apexes = objects
                    .iter()
                    .filter_map(|o| match o {
                        Object::Tree(t) => Some([t.x, t.y, t.height]),
                        Object::Confuser(_) => None,
                    })
                    .collect();
                break CorpusSample {
                    id: k as u32 + 1,
                    class,
                    points,
                    apexes,
                };
            }
        })
        .collect();
    RatingCorpus { samples }
}

fn multi_objects(rng: &mut ChaCha8Rng, g: &SceneSpec) -> Vec<Object> {
    let k = rng.random_range(2..=3);
    let mut trees = vec![random_tree(rng, g, 0.0, 0.0)];
    while trees.len() < k {
        let anchor = trees[rng.random_range(0..trees.len())];
        let mut t = random_tree(rng, g, 0.0, 0.0);
        let d = (rng.random_range(0.3..0.8) * (anchor.crown_radius + t.crown_radius)).max(1.5);
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        t.x = anchor.x + d * a.cos();
        t.y = anchor.y + d * a.sin();
        if trees.iter().all(|o| (o.x - t.x).hypot(o.y - t.y) > 1.5) {
            trees.push(t);
        }
    }
    trees.into_iter().map(Object::Tree).collect()
}

fn non_tree_objects(rng: &mut ChaCha8Rng, g: &SceneSpec, rock_fraction: f64) -> Vec<Object> {
    if rng.random::<f64>() < rock_fraction {
        return vec![Object::Confuser(random_confuser(rng, g, ConfuserKind::Rock, 0.0, 0.0))];
    }
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|_| {
            let (x, y) = if n == 1 { (0.0, 0.0) } else { (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)) };
            Object::Confuser(random_confuser(rng, g, ConfuserKind::Shrub, x, y))
        })
        .collect()
}

/// Trace pulses over the objects' bounding box and keep object hits above
/// `MIN_HAG`.
fn sample_objects(objects: &[Object], g: &SceneSpec, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for o in objects {
        let (x, y) = o.center();
        let r = o.radius();
        lo = [lo[0].min(x - r), lo[1].min(y - r)];
        hi = [hi[0].max(x + r), hi[1].max(y + r)];
    }
    let extent = [hi[0] - lo[0], hi[1] - lo[1]];
    let footprints = Footprints::build(objects, lo, extent);
    let pulses = (g.density * extent[0] * extent[1]).round() as usize;
    let mut cloud = PointCloud::with_capacity(pulses);
    for _ in 0..pulses {
        let x = lo[0] + rng.random_range(0.0..extent[0]);
        let y = lo[1] + rng.random_range(0.0..extent[1]);
        let hit = footprints.trace(objects, x, y, g.transmission, g.interior_fraction, rng);
        let h = hit.height + gaussian(rng, g.noise_sigma);
        if hit.object.is_some() && h >= MIN_HAG {
            cloud.x.push(x);
            cloud.y.push(y);
            cloud.z.push(h);
            cloud.hag.push(h as f32);
        }
    }
    cloud
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_per_class() {
        let c = generate_rating_corpus(1, 3);
        assert_eq!(c.samples.len(), 3);
        assert_eq!(c.class_counts(), [1, 1, 1]);
        assert_eq!(c.records().len(), 3);
    }

    #[test]
    fn multi_samples_have_separated_tops() {
        let c = generate_rating_corpus(30, 5);
        for s in c.samples.iter().filter(|s| s.class == RatingClass::Multi) {
            assert!(s.apexes.len() >= 2);
            for (i, a) in s.apexes.iter().enumerate() {
                for b in &s.apexes[i + 1..] {
                    assert!((a[0] - b[0]).hypot(a[1] - b[1]) > 1.0);
                }
            }
        }
        for s in &c.samples {
            assert!(s.points.len() >= MIN_POINTS);
            assert!(s.points.hag.iter().all(|&h| h >= MIN_HAG as f32));
        }
    }

    #[test]
    fn proportions_follow_counts() {
        // rated-cluster population with a heavy NonTree share
        let spec = CorpusSpec {
            counts: [289, 103, 608],
            ..CorpusSpec::default()
        };
        let c = generate_rating_corpus_with(&spec);
        let counts = c.class_counts();
        assert_eq!(counts, [289, 103, 608]);
        let n = c.samples.len() as f64;
        assert!((counts[2] as f64 / n - 0.608).abs() < 1e-3);
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_rating_corpus(5, 9), generate_rating_corpus(5, 9));
    }
}
