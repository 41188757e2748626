//! Gaussian kernel density voxelization of a cluster.

use arbor_core::pointcloud::PointCloud;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;

/// Kernel support per axis, in voxels on either side of the nearest voxel.
pub const TRUNCATION: usize = 3;

/// Dense `R^3` grid in `[z][y][x]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T = f32> {
    pub resolution: usize,
    /// Edge length of the cube, meters.
    pub extent: f64,
    pub values: Vec<T>,
}

/// 1D unit Gaussian; the 3D kernel is its product over axes.
fn gauss1(d: f64) -> f64 {
    (-0.5 * d * d).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Per-axis kernel taps of a coordinate: (first voxel, weights). Seven
/// voxels centred on the nearest one, clipped to the grid.
fn taps(p: f64, r: usize) -> (usize, Vec<f64>) {
    let t = TRUNCATION as f64;
    let c = p.round();
    let lo = (c - t).max(0.0);
    let hi = (c + t).min(r as f64 - 1.0);
    if hi < lo {
        return (0, Vec::new());
    }
    let w = (lo as usize..=hi as usize).map(|i| gauss1(p - i as f64)).collect();
    (lo as usize, w)
}

impl<T: Real> VoxelGrid<T> {
    pub fn zeros(resolution: usize, extent: f64) -> Self {
        VoxelGrid {
            resolution,
            extent,
            values: vec![T::zero(); resolution.pow(3)],
        }
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.resolution + y) * self.resolution + x
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> T {
        self.values[self.index(z, y, x)]
    }

    /// Add the truncated kernel of one point given in voxel coordinates
    /// `[x, y, z]` (voxel `i` is centred on coordinate `i`).
    pub fn splat(&mut self, p: [f64; 3]) {
        let r = self.resolution;
        let (x0, wx) = taps(p[0], r);
        let (y0, wy) = taps(p[1], r);
        let (z0, wz) = taps(p[2], r);
        for (dz, &a) in wz.iter().enumerate() {
            for (dy, &b) in wy.iter().enumerate() {
                let ab = a * b;
                let row = ((z0 + dz) * r + y0 + dy) * r + x0;
                for (dx, &c) in wx.iter().enumerate() {
                    self.values[row + dx] += T::of(ab * c);
                }
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|v| v.f64()).sum()
    }

    pub fn cast<U: Real>(&self) -> VoxelGrid<U> {
        VoxelGrid {
            resolution: self.resolution,
            extent: self.extent,
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// In-grid kernel mass of a point in voxel coordinates.
pub fn kernel_mass(p: [f64; 3], resolution: usize) -> f64 {
    (0..3).map(|k| taps(p[k], resolution).1.iter().sum::<f64>()).product()
}

/// Map cluster points to voxel coordinates: the XY centroid sits at the grid
/// centre, the lowest point at the bottom voxel layer, one meter spans
/// `R / E` voxels. Height above ground is the vertical axis.
pub fn voxel_coordinates(points: &PointCloud, resolution: usize, extent: f64) -> Result<Vec<[f64; 3]>> {
    if points.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let n = points.len() as f64;
    let cx = points.x.iter().sum::<f64>() / n;
    let cy = points.y.iter().sum::<f64>() / n;
    let zmin = points.hag.iter().fold(f64::INFINITY, |m, &h| m.min(h as f64));
    let s = resolution as f64 / extent;
    let mid = resolution as f64 / 2.0 - 0.5;
    Ok((0..points.len())
        .map(|i| [(points.x[i] - cx) * s + mid, (points.y[i] - cy) * s + mid, (points.hag[i] as f64 - zmin) * s])
        .collect())
}

pub fn kde_voxelize_as<T: Real>(points: &PointCloud, resolution: usize, extent: f64) -> Result<VoxelGrid<T>> {
    if resolution == 0 || !(extent > 0.0) {
        return Err(Error::Config(format!("grid {resolution} voxels over {extent} m")));
    }
    let coords = voxel_coordinates(points, resolution, extent)?;
    // accumulate in f64 regardless of the output type
    let mut grid = VoxelGrid::<f64>::zeros(resolution, extent);
    for p in coords {
        grid.splat(p);
    }
    Ok(grid.cast())
}

pub fn kde_voxelize(points: &PointCloud, resolution: usize, extent: f64) -> Result<VoxelGrid<f32>> {
    kde_voxelize_as(points, resolution, extent)
}

/// Voxelize many clusters in parallel; output order follows input order.
pub fn kde_voxelize_all(clouds: &[&PointCloud], resolution: usize, extent: f64) -> Result<Vec<VoxelGrid<f32>>> {
    clouds.par_iter().map(|c| kde_voxelize(c, resolution, extent)).collect()
}
