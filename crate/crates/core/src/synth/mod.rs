//! Synthetic forests with exact ground truth, a labeled cluster corpus for
//! the rater, and a truth-based stand-in for the human operator.
//!
//! Sampling follows a crude first-return model: pulses land uniformly in XY
//! at the requested density; most hit the highest surface above them, a few
//! pass through into a crown interior or down to the ground.

mod corpus;
mod forest;
mod truth;

pub use corpus::{generate_rating_corpus, generate_rating_corpus_with, CorpusSample, CorpusSpec, RatingCorpus};
pub use forest::{generate_forest, write_scene, Scene};
pub use truth::{read_scene_truth, SceneTruth, TileTruth, MULTI_SHARE, NONTREE_SHARE};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrownShape {
    Cone,
    Ellipsoid,
}

/// One tree. Heights are above local ground, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub crown_radius: f64,
    /// Height of the lowest crown point.
    pub crown_base: f64,
    pub shape: CrownShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfuserKind {
    Rock,
    Shrub,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfuserSpec {
    pub kind: ConfuserKind,
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub origin: [f64; 2],
    /// Width and depth, meters.
    pub extent: [f64; 2],
    /// Ground elevation at the origin, meters.
    pub base_z: f64,
    /// Ground gradient along x and y, rise over run.
    pub slope: [f64; 2],
    pub trees: usize,
    /// Minimum distance between stems, meters.
    pub min_spacing: f64,
    pub height: (f64, f64),
    pub crown_radius: (f64, f64),
    /// Crown length as a fraction of tree height.
    pub crown_ratio: (f64, f64),
    pub cone_fraction: f64,
    pub rocks: usize,
    pub shrubs: usize,
    pub rock_height: (f64, f64),
    pub rock_radius: (f64, f64),
    pub shrub_height: (f64, f64),
    pub shrub_radius: (f64, f64),
    /// Pulses per square meter.
    pub density: f64,
    pub noise_sigma: f64,
    /// Probability that a pulse passes the top surface.
    pub transmission: f64,
    /// Share of passing pulses that stop inside a crown instead of the ground.
    pub interior_fraction: f64,
    /// Explicit trees; when non-empty they replace random placement.
    pub fixed_trees: Vec<TreeSpec>,
    /// Explicit confusers; when non-empty they replace random placement.
    pub fixed_confusers: Vec<ConfuserSpec>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            origin: [0.0, 0.0],
            extent: [100.0, 100.0],
            base_z: 500.0,
            slope: [0.2, 0.05],
            trees: 60,
            min_spacing: 3.0,
            height: (4.0, 24.0),
            crown_radius: (1.5, 4.0),
            crown_ratio: (0.5, 0.8),
            cone_fraction: 0.6,
            rocks: 6,
            shrubs: 12,
            rock_height: (0.6, 1.6),
            rock_radius: (0.8, 2.5),
            shrub_height: (0.8, 1.9),
            shrub_radius: (0.5, 1.5),
            density: 38.0,
            noise_sigma: 0.05,
            transmission: 0.2,
            interior_fraction: 0.5,
            fixed_trees: Vec::new(),
            fixed_confusers: Vec::new(),
            seed: 1,
        }
    }
}

impl SceneSpec {
    pub fn ground_z(&self, x: f64, y: f64) -> f64 {
        self.base_z + self.slope[0] * (x - self.origin[0]) + self.slope[1] * (y - self.origin[1])
    }

    pub(crate) fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidArgument(m.to_string()));
        if !(self.density > 0.0) {
            return bad("density must be positive");
        }
        if !(self.min_spacing > 0.0) {
            return bad("minimum spacing must be positive");
        }
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return bad("extent must be positive");
        }
        if !(self.height.0 > 0.0 && self.height.0 <= self.height.1) {
            return bad("tree heights must be positive");
        }
        if !(self.crown_radius.0 > 0.0 && self.crown_radius.0 <= self.crown_radius.1) {
            return bad("crown radii must be positive");
        }
        if !(0.0..=1.0).contains(&self.transmission) || !(0.0..=1.0).contains(&self.interior_fraction) {
            return bad("transmission and interior fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Anything a pulse can hit besides the ground.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Object {
    Tree(TreeSpec),
    Confuser(ConfuserSpec),
}

impl Object {
    pub(crate) fn center(&self) -> (f64, f64) {
        match self {
            Object::Tree(t) => (t.x, t.y),
            Object::Confuser(c) => (c.x, c.y),
        }
    }

    pub(crate) fn radius(&self) -> f64 {
        match self {
            Object::Tree(t) => t.crown_radius,
            Object::Confuser(c) => c.radius,
        }
    }

    /// Upper and lower envelope above ground at horizontal offset `(dx, dy)`.
    pub(crate) fn envelope(&self, dx: f64, dy: f64) -> Option<(f64, f64)> {
        let rho = (dx * dx + dy * dy).sqrt() / self.radius();
        if rho > 1.0 {
            return None;
        }
        let s = (1.0 - rho * rho).sqrt();
        Some(match *self {
            Object::Tree(t) => match t.shape {
                CrownShape::Cone => (t.height - (t.height - t.crown_base) * rho, t.crown_base),
                CrownShape::Ellipsoid => {
                    let c = 0.5 * (t.height + t.crown_base);
                    let a = 0.5 * (t.height - t.crown_base);
                    (c + a * s, c - a * s)
                }
            },
            Object::Confuser(c) => match c.kind {
                ConfuserKind::Rock => (c.height * s, c.height * s),
                ConfuserKind::Shrub => (0.5 * c.height * (1.0 + s), 0.5 * c.height * (1.0 - s)),
            },
        })
    }
}

/// Where a pulse ended: object index (into the object list) or the ground.
pub(crate) struct Hit {
    pub object: Option<usize>,
    pub height: f64,
}

/// Horizontal bucket grid over object footprints.
pub(crate) struct Footprints {
    origin: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl Footprints {
    pub(crate) fn build(objects: &[Object], origin: [f64; 2], extent: [f64; 2]) -> Self {
        let cell = 4.0;
        let cols = (extent[0] / cell).ceil().max(1.0) as usize;
        let rows = (extent[1] / cell).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (k, o) in objects.iter().enumerate() {
            let (x, y) = o.center();
            let r = o.radius();
            let c0 = (((x - r - origin[0]) / cell).floor().max(0.0) as usize).min(cols - 1);
            let c1 = (((x + r - origin[0]) / cell).floor().max(0.0) as usize).min(cols - 1);
            let r0 = (((y - r - origin[1]) / cell).floor().max(0.0) as usize).min(rows - 1);
            let r1 = (((y + r - origin[1]) / cell).floor().max(0.0) as usize).min(rows - 1);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    buckets[row * cols + col].push(k);
                }
            }
        }
        Footprints {
            origin,
            cell,
            cols,
            rows,
            buckets,
        }
    }

    fn candidates(&self, x: f64, y: f64) -> &[usize] {
        let col = (((x - self.origin[0]) / self.cell).floor().max(0.0) as usize).min(self.cols - 1);
        let row = (((y - self.origin[1]) / self.cell).floor().max(0.0) as usize).min(self.rows - 1);
        &self.buckets[row * self.cols + col]
    }

    /// Trace one pulse at `(x, y)`.
    pub(crate) fn trace<R: Rng>(
        &self,
        objects: &[Object],
        x: f64,
        y: f64,
        transmission: f64,
        interior_fraction: f64,
        rng: &mut R,
    ) -> Hit {
        let mut covering: Vec<(usize, f64, f64)> = Vec::new();
        for &k in self.candidates(x, y) {
            let (cx, cy) = objects[k].center();
            if let Some((top, bottom)) = objects[k].envelope(x - cx, y - cy) {
                covering.push((k, top, bottom));
            }
        }
        if covering.is_empty() {
            return Hit { object: None, height: 0.0 };
        }
        let u: f64 = rng.random();
        if u >= transmission {
            let &(k, top, _) = covering.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0))).unwrap();
            return Hit {
                object: Some(k),
                height: top,
            };
        }
        let porous: Vec<&(usize, f64, f64)> = covering.iter().filter(|c| c.1 > c.2).collect();
        if !porous.is_empty() && rng.random::<f64>() < interior_fraction {
            let &&(k, top, bottom) = &porous[rng.random_range(0..porous.len())];
            return Hit {
                object: Some(k),
                height: rng.random_range(bottom..top),
            };
        }
        Hit { object: None, height: 0.0 }
    }
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

pub(crate) fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
    } else {
        0.0
    }
}

pub(crate) fn random_tree<R: Rng>(rng: &mut R, spec: &SceneSpec, x: f64, y: f64) -> TreeSpec {
    let height = uniform(rng, spec.height);
    let ratio = uniform(rng, spec.crown_ratio);
    TreeSpec {
        x,
        y,
        height,
        crown_radius: uniform(rng, spec.crown_radius),
        crown_base: height * (1.0 - ratio),
        shape: if rng.random::<f64>() < spec.cone_fraction {
            CrownShape::Cone
        } else {
            CrownShape::Ellipsoid
        },
    }
}

pub(crate) fn random_confuser<R: Rng>(rng: &mut R, spec: &SceneSpec, kind: ConfuserKind, x: f64, y: f64) -> ConfuserSpec {
    let (h, r) = match kind {
        ConfuserKind::Rock => (spec.rock_height, spec.rock_radius),
        ConfuserKind::Shrub => (spec.shrub_height, spec.shrub_radius),
    };
    ConfuserSpec {
        kind,
        x,
        y,
        height: uniform(rng, h),
        radius: uniform(rng, r),
    }
}
