use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::pointcloud::Tile;

pub const FEATURE_COUNT: usize = 6;
pub const NEIGHBORS: usize = 20;
pub const DENSITY_RADIUS: f64 = 1.0;
/// Horizontal search limit for the neighbourhood, meters.
const KNN_LIMIT: f64 = 5.0;

/// Per-point geometric descriptors. Neighbourhoods are the point plus its
/// 20 nearest neighbours. Vertical coordinates are heights above
/// ground, so terrain slope does not leak into the descriptors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointFeatures {
    pub hag: Vec<f32>,
    /// Points within 1 m, the point itself included.
    pub density: Vec<u32>,
    /// Height range of the point and its 20 nearest neighbours.
    pub extent: Vec<f32>,
    pub linearity: Vec<f32>,
    pub planarity: Vec<f32>,
    pub sphericity: Vec<f32>,
}

impl PointFeatures {
    pub fn len(&self) -> usize {
        self.hag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hag.is_empty()
    }

    /// Scaled input vector for the scorer.
    pub fn input(&self, i: usize) -> [f64; FEATURE_COUNT] {
        [
            self.hag[i] as f64 / 10.0,
            (1.0 + self.density[i] as f64).ln() / 3.0,
            self.extent[i] as f64 / 5.0,
            self.linearity[i] as f64,
            self.planarity[i] as f64,
            self.sphericity[i] as f64,
        ]
    }
}

/// `(linearity, planarity, sphericity)` from eigenvalues sorted descending.
pub fn eigen_features(l: [f64; 3]) -> (f64, f64, f64) {
    if !(l[0] > 1e-12) {
        return (0.0, 0.0, 0.0);
    }
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    (clamp((l[0] - l[1]) / l[0]), clamp((l[1] - l[2]) / l[0]), clamp(l[2] / l[0]))
}

/// Covariance eigenvalues, descending.
pub fn covariance_eigenvalues(pts: &[[f64; 3]]) -> [f64; 3] {
    let n = pts.len() as f64;
    let mut m = [0.0; 3];
    for p in pts {
        for k in 0..3 {
            m[k] += p[k] / n;
        }
    }
    let mut c = Matrix3::<f64>::zeros();
    for p in pts {
        let d = [p[0] - m[0], p[1] - m[1], p[2] - m[2]];
        for r in 0..3 {
            for s in 0..3 {
                c[(r, s)] += d[r] * d[s] / n;
            }
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().map(|v: &f64| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

pub fn extract_features(tile: &Tile) -> PointFeatures {
    let c = &tile.cloud;
    let h: Vec<f64> = c.hag.iter().map(|&v| v as f64).collect();
    let rows: Vec<(u32, f32, f32, f32, f32)> = (0..c.len())
        .into_par_iter()
        .map(|i| {
            let q = [c.x[i], c.y[i], h[i]];
            let density = tile.index.within_radius(&c.x, &c.y, &h, q, DENSITY_RADIUS).len() as u32;
            let nn = tile.index.knn(&c.x, &c.y, &h, q, NEIGHBORS + 1, KNN_LIMIT);
            if nn.len() < 3 {
                return (density, 0.0, 0.0, 0.0, 0.0);
            }
            let pts: Vec<[f64; 3]> = nn.iter().map(|&(j, _)| [c.x[j], c.y[j], h[j]]).collect();
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[2]), hi.max(p[2])));
            let (l, p, s) = eigen_features(covariance_eigenvalues(&pts));
            (density, (hi - lo) as f32, l as f32, p as f32, s as f32)
        })
        .collect();
    PointFeatures {
        hag: c.hag.clone(),
        density: rows.iter().map(|r| r.0).collect(),
        extent: rows.iter().map(|r| r.1).collect(),
        linearity: rows.iter().map(|r| r.2).collect(),
        planarity: rows.iter().map(|r| r.3).collect(),
        sphericity: rows.iter().map(|r| r.4).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::PointCloud;

    fn tile_of(pts: &[[f64; 3]]) -> Tile {
        let mut c = PointCloud::from_xyz(pts);
        c.hag = pts.iter().map(|p| p[2] as f32).collect();
        Tile::new(0, 0, 0.0, 0.0, 100.0, c)
    }

    #[test]
    fn plane_patch() {
        // 10 x 10 grid, 0.3 m pitch, tilted plane
        let pts: Vec<[f64; 3]> = (0..100)
            .map(|k| {
                let (x, y) = ((k % 10) as f64 * 0.3, (k / 10) as f64 * 0.3);
                [x, y, 1.0 + 0.2 * x]
            })
            .collect();
        let f = extract_features(&tile_of(&pts));
        for k in 0..100 {
            let (i, j) = (k % 10, k / 10);
            if (2..8).contains(&i) && (2..8).contains(&j) {
                assert!(f.planarity[k] > 0.9, "{}", f.planarity[k]);
                assert!(f.sphericity[k] < 0.05);
            }
        }
    }

    #[test]
    fn vertical_line() {
        let pts: Vec<[f64; 3]> = (0..40).map(|k| [5.0, 5.0, k as f64 * 0.2]).collect();
        let f = extract_features(&tile_of(&pts));
        assert!(f.linearity.iter().all(|&l| l > 0.9));
        assert!(f.extent.iter().all(|&e| (e - 20.0 * 0.2).abs() < 1e-5));
    }

    #[test]
    fn isolated_point() {
        let f = extract_features(&tile_of(&[[1.0, 1.0, 3.0], [50.0, 50.0, 0.0], [90.0, 90.0, 0.0]]));
        assert_eq!(f.density[0], 1);
        assert_eq!(f.extent[0], 0.0);
        assert_eq!(f.sphericity[0], 0.0);
    }

    #[test]
    fn eigen_oracle() {
        // analytic eigenstructure of a 2D square lattice: equal in-plane spread, no normal spread
        assert_eq!(eigen_features([1.0, 1.0, 0.0]), (0.0, 1.0, 0.0));
        assert_eq!(eigen_features([1.0, 0.0, 0.0]), (1.0, 0.0, 0.0));
        assert_eq!(eigen_features([0.0, 0.0, 0.0]), (0.0, 0.0, 0.0));
        let ev = covariance_eigenvalues(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, -2.0, 0.0]]);
        assert!((ev[0] - 2.0).abs() < 1e-12 && (ev[1] - 0.5).abs() < 1e-12 && ev[2].abs() < 1e-12);
    }
}
