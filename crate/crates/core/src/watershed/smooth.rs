use crate::pointcloud::Raster;

/// Normalized 1D Gaussian weights for `sigma` cells, truncated at 3 sigma.
/// Index `radius` is the center tap.
pub fn gaussian_kernel_1d(sigma_cells: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_cells).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma_cells).powi(2)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Separable Gaussian blur with `sigma` in meters. Near the raster edge the
/// kernel is renormalized over the in-bounds taps. `sigma == 0` returns the
/// input unchanged.
pub fn smooth_chm(chm: &Raster, sigma: f64) -> Raster {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return chm.clone();
    }
    let kernel = gaussian_kernel_1d(sigma / chm.pitch);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (chm.width as isize, chm.height as isize);

    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut dst = vec![0.0f32; src.len()];
        for row in 0..h {
            for col in 0..w {
                let (mut acc, mut norm) = (0.0f64, 0.0f64);
                for (k, &wt) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (c, r) = if horizontal { (col + off, row) } else { (col, row + off) };
                    if c < 0 || r < 0 || c >= w || r >= h {
                        continue;
                    }
                    acc += wt * src[(r * w + c) as usize] as f64;
                    norm += wt;
                }
                dst[(row * w + col) as usize] = (acc / norm) as f32;
            }
        }
        dst
    };
    let tmp = pass(&chm.values, true);
    chm.with_values(pass(&tmp, false))
}
