use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Bounds, GridIndex, PointCloud};
use crate::error::{Error, IoContext, Result};
use crate::util::{read_json, write_atomic, write_json_atomic, ByteReader, ByteWriter};

const TILE_MAGIC: &[u8; 4] = b"TRLT";
const TILE_VERSION: u32 = 1;
const HAS_INTENSITY: u32 = 1;
const HAS_RGB: u32 = 1 << 1;

/// Cell size of the per-tile XY index, in meters.
pub const INDEX_CELL: f64 = 1.0;

/// A square piece of the survey with its own point storage and XY index.
#[derive(Debug, Clone)]
pub struct Tile {
    pub ix: i64,
    pub iy: i64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub size: f64,
    pub cloud: PointCloud,
    pub index: GridIndex,
}

impl Tile {
    pub fn new(ix: i64, iy: i64, origin_x: f64, origin_y: f64, size: f64, cloud: PointCloud) -> Self {
        let index = GridIndex::build(&cloud.x, &cloud.y, INDEX_CELL);
        Tile {
            ix,
            iy,
            origin_x,
            origin_y,
            size,
            cloud,
            index,
        }
    }

    pub fn name(&self) -> String {
        format!("t_{}_{}", self.ix, self.iy)
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.origin_x && x < self.origin_x + self.size && y >= self.origin_y && y < self.origin_y + self.size
    }

    pub fn encode(&self) -> Vec<u8> {
        let c = &self.cloud;
        let mut mask = 0;
        if c.intensity.is_some() {
            mask |= HAS_INTENSITY;
        }
        if c.rgb.is_some() {
            mask |= HAS_RGB;
        }
        let mut w = ByteWriter::new();
        w.bytes(TILE_MAGIC);
        w.u32(TILE_VERSION);
        w.u32(mask);
        w.u64(c.len() as u64);
        w.f64s(&c.x);
        w.f64s(&c.y);
        w.f64s(&c.z);
        w.f32s(&c.hag);
        if let Some(i) = &c.intensity {
            w.f32s(i);
        }
        if let Some(rgb) = &c.rgb {
            for px in rgb {
                w.bytes(px);
            }
        }
        w.buf
    }

    pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
        let mut r = ByteReader::new(bytes, "tile file");
        r.expect_magic(TILE_MAGIC)?;
        let version = r.u32()?;
        if version != TILE_VERSION {
            return Err(Error::malformed("tile file", format!("unsupported version {version}")));
        }
        let mask = r.u32()?;
        let n = r.u64()? as usize;
        let mut cloud = PointCloud {
            x: r.f64s(n)?,
            y: r.f64s(n)?,
            z: r.f64s(n)?,
            hag: r.f32s(n)?,
            intensity: None,
            rgb: None,
        };
        if mask & HAS_INTENSITY != 0 {
            cloud.intensity = Some(r.f32s(n)?);
        }
        if mask & HAS_RGB != 0 {
            let raw = r.take(n * 3)?;
            cloud.rgb = Some(raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
        }
        r.finish()?;
        Ok(cloud)
    }
}

/// Partition a cloud into half-open square tiles anchored at its XY minimum.
pub fn build_tiles(cloud: &PointCloud, tile_size: f64) -> Result<Vec<Tile>> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("cannot tile an empty cloud".into()));
    }
    let b = cloud.bounds();
    build_tiles_at(cloud, tile_size, [b.min[0], b.min[1]])
}

/// Partition a cloud into tiles of `tile_size` anchored at `origin`; points
/// on an upper tile edge belong to the next tile. Tiles come out sorted by
/// `(iy, ix)`; point order within a tile follows the input.
pub fn build_tiles_at(cloud: &PointCloud, tile_size: f64, origin: [f64; 2]) -> Result<Vec<Tile>> {
    if !(tile_size > 0.0) {
        return Err(Error::InvalidArgument(format!("tile size must be positive, got {tile_size}")));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("cannot tile an empty cloud".into()));
    }
    Ok(tile_groups(cloud, tile_size, origin)
        .into_iter()
        .map(|((iy, ix), members)| {
            Tile::new(
                ix,
                iy,
                origin[0] + ix as f64 * tile_size,
                origin[1] + iy as f64 * tile_size,
                tile_size,
                cloud.select(&members),
            )
        })
        .collect())
}

/// Point indices per tile key `(iy, ix)`, in input order. This is the
/// partition `build_tiles_at` materializes.
pub fn tile_groups(cloud: &PointCloud, tile_size: f64, origin: [f64; 2]) -> BTreeMap<(i64, i64), Vec<usize>> {
    let mut groups: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for i in 0..cloud.len() {
        let ix = ((cloud.x[i] - origin[0]) / tile_size).floor() as i64;
        let iy = ((cloud.y[i] - origin[1]) / tile_size).floor() as i64;
        groups.entry((iy, ix)).or_default().push(i);
    }
    groups
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TileEntry {
    pub name: String,
    pub ix: i64,
    pub iy: i64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub size: f64,
    pub count: u64,
    pub bounds: Option<Bounds>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TileManifest {
    pub version: u32,
    pub crs: String,
    pub tile_size: f64,
    pub tiles: Vec<TileEntry>,
}

/// On-disk tile collection: `<dir>/t_<ix>_<iy>.bin` plus `<dir>/manifest.json`.
pub struct TileStore {
    pub dir: PathBuf,
}

impl TileStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TileStore { dir: dir.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn tile_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.bin"))
    }

    pub fn write(&self, tiles: &[Tile], crs: &str) -> Result<TileManifest> {
        fs::create_dir_all(&self.dir).at(&self.dir)?;
        let mut entries = Vec::with_capacity(tiles.len());
        for t in tiles {
            write_atomic(&self.tile_path(&t.name()), &t.encode())?;
            let b = t.cloud.bounds();
            entries.push(TileEntry {
                name: t.name(),
                ix: t.ix,
                iy: t.iy,
                origin_x: t.origin_x,
                origin_y: t.origin_y,
                size: t.size,
                count: t.len() as u64,
                bounds: (!b.is_empty()).then_some(b),
            });
        }
        let manifest = TileManifest {
            version: TILE_VERSION,
            crs: crs.to_string(),
            tile_size: tiles.first().map_or(0.0, |t| t.size),
            tiles: entries,
        };
        write_json_atomic(&self.manifest_path(), &manifest)?;
        Ok(manifest)
    }

    pub fn manifest(&self) -> Result<TileManifest> {
        read_json(&self.manifest_path())
    }

    pub fn read_tile(&self, entry: &TileEntry) -> Result<Tile> {
        let path = self.tile_path(&entry.name);
        let bytes = fs::read(&path).at(&path)?;
        let cloud = Tile::decode_cloud(&bytes).map_err(|e| match e {
            Error::Malformed { detail, .. } => Error::malformed(path.display().to_string(), detail),
            other => other,
        })?;
        if cloud.len() as u64 != entry.count {
            return Err(Error::malformed(
                path.display().to_string(),
                format!("manifest lists {} points, file holds {}", entry.count, cloud.len()),
            ));
        }
        Ok(Tile::new(entry.ix, entry.iy, entry.origin_x, entry.origin_y, entry.size, cloud))
    }

    pub fn read_all(&self) -> Result<Vec<Tile>> {
        self.manifest()?.tiles.iter().map(|e| self.read_tile(e)).collect()
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join("manifest.json").is_file()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn four_points_three_tiles() {
        let cloud = PointCloud::from_xyz(&[[1.0, 1.0, 0.0], [99.0, 99.0, 0.0], [101.0, 1.0, 0.0], [1.0, 101.0, 0.0]]);
        let tiles = build_tiles(&cloud, 100.0).unwrap();
        let counts: Vec<usize> = tiles.iter().map(Tile::len).collect();
        assert_eq!(counts, vec![2, 1, 1]);
        for t in &tiles {
            for i in 0..t.len() {
                assert!(t.contains_xy(t.cloud.x[i], t.cloud.y[i]));
            }
        }
    }

    #[test]
    fn single_square_single_tile() {
        let cloud = PointCloud::from_xyz(&[[5.0, 5.0, 0.0], [50.0, 20.0, 1.0], [90.0, 99.0, 2.0]]);
        assert_eq!(build_tiles(&cloud, 100.0).unwrap().len(), 1);
    }

    #[test]
    fn upper_edge_goes_to_next_tile() {
        let cloud = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]]);
        let tiles = build_tiles(&cloud, 100.0).unwrap();
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles[1].ix, 1);
    }

    #[test]
    fn random_points_are_conserved() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 3]> = (0..10_000)
            .map(|_| [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0), rng.random_range(0.0..30.0)])
            .collect();
        let cloud = PointCloud::from_xyz(&pts);
        let tiles = build_tiles(&cloud, 100.0).unwrap();
        // recount oracle: bucket each point independently
        let b = cloud.bounds();
        let mut want: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for p in &pts {
            let key = (((p[1] - b.min[1]) / 100.0).floor() as i64, ((p[0] - b.min[0]) / 100.0).floor() as i64);
            *want.entry(key).or_default() += 1;
        }
        let got: BTreeMap<(i64, i64), usize> = tiles.iter().map(|t| ((t.iy, t.ix), t.len())).collect();
        assert_eq!(got, want);
        assert_eq!(tiles.iter().map(Tile::len).sum::<usize>(), 10_000);
    }

    #[test]
    fn store_round_trip_with_channels() {
        let mut cloud = PointCloud::from_xyz(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [150.0, 5.0, 1.0]]);
        cloud.hag = vec![0.5, 1.5, 2.5];
        cloud.intensity = Some(vec![0.1, 0.2, 0.3]);
        cloud.rgb = Some(vec![[1, 2, 3], [4, 5, 6], [7, 8, 9]]);
        let tiles = build_tiles(&cloud, 100.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = TileStore::new(dir.path().join("tiles"));
        let manifest = store.write(&tiles, "EPSG:2056").unwrap();
        assert_eq!(manifest.tiles.len(), 2);
        let back = store.read_all().unwrap();
        for (a, b) in tiles.iter().zip(&back) {
            assert_eq!(a.cloud, b.cloud);
            assert_eq!(a.name(), b.name());
        }
        assert!(store.tile_path("t_0_0").is_file());
    }

    #[test]
    fn truncated_tile_is_rejected() {
        let tile = Tile::new(0, 0, 0.0, 0.0, 10.0, PointCloud::from_xyz(&[[1.0, 1.0, 1.0]]));
        let bytes = tile.encode();
        assert!(Tile::decode_cloud(&bytes[..bytes.len() - 2]).is_err());
        assert!(Tile::decode_cloud(b"XXXX").is_err());
    }

    proptest! {
        #[test]
        fn tiling_partitions_the_cloud(pts in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 1..200), size in 1.0f64..200.0) {
            let cloud = PointCloud::from_xyz(&pts.iter().map(|&(x, y)| [x, y, 0.0]).collect::<Vec<_>>());
            let tiles = build_tiles(&cloud, size).unwrap();
            prop_assert_eq!(tiles.iter().map(Tile::len).sum::<usize>(), pts.len());
            for t in &tiles {
                for i in 0..t.len() {
                    prop_assert!(t.contains_xy(t.cloud.x[i], t.cloud.y[i]));
                }
            }
        }
    }
}
