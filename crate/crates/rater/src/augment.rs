use arbor_core::pointcloud::PointCloud;
use rand::Rng;

/// Rotate about the vertical axis through the XY centroid. z and height above
/// ground are untouched.
pub fn rotate_z(points: &PointCloud, angle: f64) -> PointCloud {
    let mut out = points.clone();
    if points.is_empty() {
        return out;
    }
    let n = points.len() as f64;
    let cx = points.x.iter().sum::<f64>() / n;
    let cy = points.y.iter().sum::<f64>() / n;
    let (s, c) = angle.sin_cos();
    for i in 0..points.len() {
        let dx = points.x[i] - cx;
        let dy = points.y[i] - cy;
        out.x[i] = cx + c * dx - s * dy;
        out.y[i] = cy + s * dx + c * dy;
    }
    out
}

/// Rotation by a uniform angle in `[0, 2pi)`.
pub fn augment_rotation_z<R: Rng + ?Sized>(points: &PointCloud, rng: &mut R) -> PointCloud {
    rotate_z(points, rng.random_range(0.0..std::f64::consts::TAU))
}
