use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};

use super::{Raster, Tile};

/// Lowest admissible height above ground; small negatives come from
/// ground-model noise.
pub const HAG_FLOOR: f32 = -0.5;

/// Residual (m) beyond which a neighborhood sample is treated as an outlier.
const OUTLIER_TOLERANCE: f64 = 0.5;
const MAX_REJECTIONS: usize = 3;

/// Terrain raster with `cell` meter pitch over the tile footprint.
///
/// Each cell keeps its lowest point. The ground value at a cell center is a
/// least-squares plane through the lowest points of the 3x3 neighborhood,
/// refit after discarding the worst sample while any residual exceeds the
/// outlier tolerance. Cells with no samples nearby take the value of the
/// nearest estimated cell. Tiles with fewer than 4 points get a constant
/// raster at their minimum z.
pub fn estimate_ground(tile: &Tile, cell: f64) -> Raster {
    let n = (tile.size / cell).ceil().max(1.0) as usize;
    let mut ground = Raster::filled(tile.origin_x, tile.origin_y, cell, n, n, f32::NAN);
    let c = &tile.cloud;
    if c.len() < 4 {
        let zmin = c.z.iter().copied().fold(f64::INFINITY, f64::min);
        let zmin = if zmin.is_finite() { zmin } else { 0.0 };
        ground.values.fill(zmin as f32);
        return ground;
    }

    let mut lowest: Vec<Option<[f64; 3]>> = vec![None; n * n];
    for i in 0..c.len() {
        let (col, row) = ground.cell_clamped(c.x[i], c.y[i]);
        let slot = &mut lowest[row * n + col];
        if slot.is_none_or(|p| c.z[i] < p[2]) {
            *slot = Some([c.x[i], c.y[i], c.z[i]]);
        }
    }

    for row in 0..n {
        for col in 0..n {
            let mut samples = Vec::with_capacity(9);
            for r in row.saturating_sub(1)..=(row + 1).min(n - 1) {
                for cc in col.saturating_sub(1)..=(col + 1).min(n - 1) {
                    if let Some(p) = lowest[r * n + cc] {
                        samples.push(p);
                    }
                }
            }
            if samples.is_empty() {
                continue;
            }
            let center = ground.cell_center(col, row);
            ground.set(col, row, robust_plane_at(&mut samples, center) as f32);
        }
    }
    fill_nearest(&mut ground);
    ground
}

/// Evaluate a robust plane fit of `samples` at `center`.
fn robust_plane_at(samples: &mut Vec<[f64; 3]>, center: (f64, f64)) -> f64 {
    let mut rejected = 0;
    loop {
        let Some(coef) = fit_plane(samples, center) else {
            return median_z(samples);
        };
        let residual = |p: &[f64; 3]| p[2] - (coef[0] + coef[1] * (p[0] - center.0) + coef[2] * (p[1] - center.1));
        let (worst, worst_r) = samples
            .iter()
            .enumerate()
            .map(|(k, p)| (k, residual(p).abs()))
            .fold((0, 0.0), |acc, e| if e.1 > acc.1 { e } else { acc });
        if worst_r <= OUTLIER_TOLERANCE || samples.len() <= 3 || rejected >= MAX_REJECTIONS {
            return coef[0];
        }
        samples.swap_remove(worst);
        rejected += 1;
    }
}

/// Least-squares `z = a + b (x - cx) + c (y - cy)`; `None` when the samples
/// do not span a plane.
fn fit_plane(samples: &[[f64; 3]], center: (f64, f64)) -> Option<[f64; 3]> {
    if samples.len() < 3 {
        return None;
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for p in samples {
        let row = Vector3::new(1.0, p[0] - center.0, p[1] - center.1);
        ata += row * row.transpose();
        atb += row * p[2];
    }
    // Near-collinear sample sets give wild extrapolations.
    let scale = ata[(1, 1)].max(ata[(2, 2)]).max(1e-12);
    if ata.determinant().abs() < 1e-6 * scale * scale * ata[(0, 0)] {
        return None;
    }
    let sol = ata.lu().solve(&atb)?;
    Some([sol[0], sol[1], sol[2]])
}

fn median_z(samples: &[[f64; 3]]) -> f64 {
    let mut z: Vec<f64> = samples.iter().map(|p| p[2]).collect();
    z.sort_by(f64::total_cmp);
    let m = z.len() / 2;
    if z.len() % 2 == 1 {
        z[m]
    } else {
        0.5 * (z[m - 1] + z[m])
    }
}

/// Multi-source breadth-first fill of NaN cells from their nearest valid cell.
fn fill_nearest(r: &mut Raster) {
    let (w, h) = (r.width, r.height);
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&k| !r.values[k].is_nan()).collect();
    if queue.is_empty() {
        r.values.fill(0.0);
        return;
    }
    while let Some(k) = queue.pop_front() {
        let (col, row) = ((k % w) as isize, (k / w) as isize);
        for (dc, dr) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (nc, nr) = (col + dc, row + dr);
            if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                continue;
            }
            let nk = nr as usize * w + nc as usize;
            if r.values[nk].is_nan() {
                r.values[nk] = r.values[k];
                queue.push_back(nk);
            }
        }
    }
}

/// Set each point's height above ground from the terrain raster, clamped at
/// [`HAG_FLOOR`].
pub fn normalize_heights(tile: &mut Tile, ground: &Raster) {
    let c = &mut tile.cloud;
    for i in 0..c.len() {
        let g = ground.bilinear(c.x[i], c.y[i]);
        c.hag[i] = ((c.z[i] - g) as f32).max(HAG_FLOOR);
    }
}
