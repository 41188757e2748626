//! Columnar point storage, ingestion, tiling, ground normalization, canopy
//! height rasters and the uniform XY grid index.

mod ground;
mod index;
mod ingest;
mod raster;
mod tiles;

pub use ground::{estimate_ground, normalize_heights, HAG_FLOOR};
pub use index::GridIndex;
pub use ingest::{ingest_xyz, parse_xyz, IngestReport, XyzFormat};
pub use raster::{rasterize_chm, Raster};
pub use tiles::{build_tiles, build_tiles_at, tile_groups, Tile, TileEntry, TileManifest, TileStore};

/// A single point, as materialized from the columnar storage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub hag: f32,
    pub intensity: Option<f32>,
    pub rgb: Option<[u8; 3]>,
}

impl Point {
    pub fn xyz(x: f64, y: f64, z: f64) -> Self {
        Point {
            x,
            y,
            z,
            hag: 0.0,
            intensity: None,
            rgb: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn empty() -> Self {
        Bounds {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn extend(&mut self, p: [f64; 3]) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min[0] > self.max[0]
    }
}

/// Columnar point cloud. Coordinates are f64 meters in a projected CRS,
/// height above ground is f32.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub hag: Vec<f32>,
    pub intensity: Option<Vec<f32>>,
    pub rgb: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        PointCloud {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            hag: Vec::with_capacity(n),
            intensity: None,
            rgb: None,
        }
    }

    /// Build from xyz triples with zero hag and no optional channels.
    pub fn from_xyz(points: &[[f64; 3]]) -> Self {
        let mut c = Self::with_capacity(points.len());
        for p in points {
            c.x.push(p[0]);
            c.y.push(p[1]);
            c.z.push(p[2]);
            c.hag.push(0.0);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn push(&mut self, p: Point) {
        self.x.push(p.x);
        self.y.push(p.y);
        self.z.push(p.z);
        self.hag.push(p.hag);
        if let Some(i) = self.intensity.as_mut() {
            i.push(p.intensity.unwrap_or(0.0));
        }
        if let Some(c) = self.rgb.as_mut() {
            c.push(p.rgb.unwrap_or([0, 0, 0]));
        }
    }

    pub fn get(&self, i: usize) -> Point {
        Point {
            x: self.x[i],
            y: self.y[i],
            z: self.z[i],
            hag: self.hag[i],
            intensity: self.intensity.as_ref().map(|v| v[i]),
            rgb: self.rgb.as_ref().map(|v| v[i]),
        }
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        [self.x[i], self.y[i], self.z[i]]
    }

    /// Position with height above ground as the vertical coordinate.
    pub fn normalized_position(&self, i: usize) -> [f64; 3] {
        [self.x[i], self.y[i], self.hag[i] as f64]
    }

    pub fn bounds(&self) -> Bounds {
        let mut b = Bounds::empty();
        for i in 0..self.len() {
            b.extend(self.position(i));
        }
        b
    }

    /// Copy the points at `indices` (in order) into a new cloud.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            x: indices.iter().map(|&i| self.x[i]).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            z: indices.iter().map(|&i| self.z[i]).collect(),
            hag: indices.iter().map(|&i| self.hag[i]).collect(),
            intensity: self.intensity.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
            rgb: self.rgb.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }
}
