use super::Tile;

/// Regular grid of f32 values. Row `r` spans
/// `origin_y + r * pitch .. origin_y + (r + 1) * pitch`; NaN marks no data.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pitch: f64,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Raster {
    pub fn filled(origin_x: f64, origin_y: f64, pitch: f64, width: usize, height: usize, value: f32) -> Self {
        assert!(pitch > 0.0, "raster pitch must be positive");
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Raster {
            origin_x,
            origin_y,
            pitch,
            width,
            height,
            values: vec![value; width * height],
        }
    }

    /// Same geometry, new values.
    pub fn with_values(&self, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), self.width * self.height);
        Raster {
            values,
            ..self.clone()
        }
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f32) {
        self.values[row * self.width + col] = v;
    }

    /// Cell containing `(x, y)`, if inside the raster.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin_x) / self.pitch).floor();
        let r = ((y - self.origin_y) / self.pitch).floor();
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            None
        } else {
            Some((c as usize, r as usize))
        }
    }

    /// Cell containing `(x, y)`, clamped to the raster.
    pub fn cell_clamped(&self, x: f64, y: f64) -> (usize, usize) {
        let c = ((x - self.origin_x) / self.pitch).floor().max(0.0) as usize;
        let r = ((y - self.origin_y) / self.pitch).floor().max(0.0) as usize;
        (c.min(self.width - 1), r.min(self.height - 1))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pitch,
            self.origin_y + (row as f64 + 0.5) * self.pitch,
        )
    }

    /// Bilinear interpolation between cell centers. Outside the outermost
    /// centers the edge segment is extended linearly, so linear surfaces are
    /// reproduced exactly everywhere. Values must be NaN-free.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.origin_x) / self.pitch - 0.5;
        let v = (y - self.origin_y) / self.pitch - 0.5;
        let (c0, tu) = Self::segment(u, self.width);
        let (r0, tv) = Self::segment(v, self.height);
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let f = |c: usize, r: usize| self.at(c, r) as f64;
        let a = f(c0, r0) * (1.0 - tu) + f(c1, r0) * tu;
        let b = f(c0, r1) * (1.0 - tu) + f(c1, r1) * tu;
        a * (1.0 - tv) + b * tv
    }

    fn segment(u: f64, n: usize) -> (usize, f64) {
        if n == 1 {
            return (0, 0.0);
        }
        let i = (u.floor().max(0.0) as usize).min(n - 2);
        (i, u - i as f64)
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().filter(|v| !v.is_nan()).fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Canopy height model: per-cell maximum height above ground over the tile
/// footprint. Cells without points (or with only sub-ground points) are 0.
pub fn rasterize_chm(tile: &Tile, pitch: f64) -> Raster {
    let n = (tile.size / pitch).ceil().max(1.0) as usize;
    let mut chm = Raster::filled(tile.origin_x, tile.origin_y, pitch, n, n, 0.0);
    let c = &tile.cloud;
    for i in 0..c.len() {
        let (col, row) = chm.cell_clamped(c.x[i], c.y[i]);
        let v = chm.at(col, row).max(c.hag[i]);
        chm.set(col, row, v);
    }
    chm
}
