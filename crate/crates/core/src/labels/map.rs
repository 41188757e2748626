use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::rating::RatingClass;
use crate::util::{read_json, write_atomic, write_json_atomic, ByteReader, ByteWriter};
use crate::watershed::ClusterSet;

const LABEL_MAGIC: &[u8; 4] = b"LBLM";
const LABEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Semantic {
    Ground = 0,
    /// Trees known to be present but not resolved into instances; carries
    /// zero loss weight.
    Gray = 1,
    Tree = 2,
}

impl Semantic {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Semantic::Ground),
            1 => Some(Semantic::Gray),
            2 => Some(Semantic::Tree),
            _ => None,
        }
    }
}

/// Pseudo labels of one tile.
///
/// Invariants: `instance != 0` implies `Tree`; `next_instance` exceeds every
/// id in use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub tile: String,
    semantic: Vec<Semantic>,
    instance: Vec<u32>,
    next_instance: u32,
}

impl LabelMap {
    /// Every point Ground, no instances.
    pub fn new(tile: impl Into<String>, point_count: usize) -> Self {
        LabelMap {
            tile: tile.into(),
            semantic: vec![Semantic::Ground; point_count],
            instance: vec![0; point_count],
            next_instance: 1,
        }
    }

    /// Assemble from raw arrays, validating the invariants.
    pub fn from_parts(tile: impl Into<String>, semantic: Vec<Semantic>, instance: Vec<u32>) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(Error::malformed("label map", "semantic and instance arrays differ in length"));
        }
        let next = instance.iter().copied().max().unwrap_or(0) + 1;
        let map = LabelMap {
            tile: tile.into(),
            semantic,
            instance,
            next_instance: next,
        };
        map.check()?;
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn semantic(&self) -> &[Semantic] {
        &self.semantic
    }

    pub fn instances(&self) -> &[u32] {
        &self.instance
    }

    pub fn next_instance(&self) -> u32 {
        self.next_instance
    }

    pub fn semantic_at(&self, i: usize) -> Semantic {
        self.semantic[i]
    }

    pub fn instance_at(&self, i: usize) -> u32 {
        self.instance[i]
    }

    pub fn set_semantic(&mut self, i: usize, s: Semantic) {
        debug_assert!(s == Semantic::Tree || self.instance[i] == 0);
        self.semantic[i] = s;
    }

    /// Assign point `i` to instance `id` (marking it Tree).
    pub fn assign(&mut self, i: usize, id: u32) {
        assert!(id != 0 && id < self.next_instance, "instance {id} was never allocated");
        self.instance[i] = id;
        self.semantic[i] = Semantic::Tree;
    }

    pub fn allocate_instance(&mut self) -> u32 {
        let id = self.next_instance;
        self.next_instance += 1;
        id
    }

    /// Distinct instance ids present, ascending.
    pub fn instance_ids(&self) -> BTreeSet<u32> {
        self.instance.iter().copied().filter(|&i| i != 0).collect()
    }

    pub fn instance_count(&self) -> usize {
        self.instance_ids().len()
    }

    /// Members of each requested instance in one pass, indices ascending.
    pub fn members_of(&self, ids: &BTreeSet<u32>) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = ids.iter().map(|&id| (id, Vec::new())).collect();
        if ids.is_empty() {
            return out;
        }
        for (i, &id) in self.instance.iter().enumerate() {
            if id != 0 {
                if let Some(v) = out.get_mut(&id) {
                    v.push(i as u32);
                }
            }
        }
        out
    }

    pub fn all_members(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (i, &id) in self.instance.iter().enumerate() {
            if id != 0 {
                out.entry(id).or_default().push(i as u32);
            }
        }
        out
    }

    pub fn count(&self, s: Semantic) -> usize {
        self.semantic.iter().filter(|&&v| v == s).count()
    }

    pub fn check(&self) -> Result<()> {
        for (i, (&s, &id)) in self.semantic.iter().zip(&self.instance).enumerate() {
            if id != 0 && s != Semantic::Tree {
                return Err(Error::malformed(
                    format!("label map {}", self.tile),
                    format!("point {i} has instance {id} but semantic {s:?}"),
                ));
            }
            if id >= self.next_instance {
                return Err(Error::malformed(
                    format!("label map {}", self.tile),
                    format!("instance {id} is not below the counter {}", self.next_instance),
                ));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(LABEL_MAGIC);
        w.u32(LABEL_VERSION);
        w.u64(self.len() as u64);
        w.buf.extend(self.semantic.iter().map(|&s| s as u8));
        w.u32s(&self.instance);
        w.buf
    }

    pub fn decode(tile: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "label file");
        r.expect_magic(LABEL_MAGIC)?;
        let version = r.u32()?;
        if version != LABEL_VERSION {
            return Err(Error::malformed("label file", format!("unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let semantic = r
            .take(n)?
            .iter()
            .map(|&b| Semantic::from_u8(b).ok_or_else(|| Error::malformed("label file", format!("semantic code {b}"))))
            .collect::<Result<Vec<_>>>()?;
        let instance = r.u32s(n)?;
        r.finish()?;
        Self::from_parts(tile, semantic, instance)
    }

    /// Raise the id counter (ids are never reused, even for instances that
    /// no longer own points).
    pub fn reserve_ids_below(&mut self, next: u32) {
        self.next_instance = self.next_instance.max(next);
    }
}

/// Initial pseudo labels: everything Ground, points of Multi-rated clusters
/// Gray, then every Single-rated cluster a fresh instance (overriding Gray).
/// NonTree clusters stay Ground. Errors if a cluster has no rating.
pub fn build_initial_labels(
    point_count: usize,
    clusters: &ClusterSet,
    ratings: &BTreeMap<u32, RatingClass>,
) -> Result<LabelMap> {
    let mut map = LabelMap::new(clusters.tile.clone(), point_count);
    for c in clusters.iter() {
        if !ratings.contains_key(&c.id) {
            return Err(Error::UnratedCluster(c.id));
        }
    }
    for c in clusters.iter().filter(|c| ratings[&c.id] == RatingClass::Multi) {
        for &i in &c.point_indices {
            map.semantic[i as usize] = Semantic::Gray;
        }
    }
    for c in clusters.iter().filter(|c| ratings[&c.id] == RatingClass::Single) {
        let id = map.allocate_instance();
        for &i in &c.point_indices {
            map.assign(i as usize, id);
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsManifest {
    pub iteration: usize,
    pub instance_count: usize,
    pub provenance: String,
    pub tiles: Vec<LabelTileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelTileEntry {
    pub tile: String,
    pub points: u64,
    pub instances: usize,
    pub next_instance: u32,
}

/// Write `<dir>/<tile>.lbl` for each map plus `labels_manifest.json`.
pub fn write_label_dir(dir: &Path, maps: &[LabelMap], iteration: usize, provenance: &str) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut tiles = Vec::new();
    for m in maps {
        write_atomic(&dir.join(format!("{}.lbl", m.tile)), &m.encode())?;
        tiles.push(LabelTileEntry {
            tile: m.tile.clone(),
            points: m.len() as u64,
            instances: m.instance_count(),
            next_instance: m.next_instance,
        });
    }
    let manifest = LabelsManifest {
        iteration,
        instance_count: tiles.iter().map(|t| t.instances).sum(),
        provenance: provenance.to_string(),
        tiles,
    };
    write_json_atomic(&dir.join("labels_manifest.json"), &manifest)
}

pub fn read_label_dir(dir: &Path) -> Result<(LabelsManifest, Vec<LabelMap>)> {
    let manifest: LabelsManifest = read_json(&dir.join("labels_manifest.json"))?;
    let mut maps = Vec::with_capacity(manifest.tiles.len());
    for t in &manifest.tiles {
        let path = dir.join(format!("{}.lbl", t.tile));
        let bytes = fs::read(&path).at(&path)?;
        let mut m = LabelMap::decode(t.tile.clone(), &bytes).map_err(|e| match e {
            Error::Malformed { detail, .. } => Error::malformed(path.display().to_string(), detail),
            other => other,
        })?;
        if m.len() as u64 != t.points {
            return Err(Error::malformed(path.display().to_string(), "point count differs from manifest"));
        }
        m.reserve_ids_below(t.next_instance);
        maps.push(m);
    }
    Ok((manifest, maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::PointCloud;
    use crate::watershed::{Cluster, ClusterSource};

    fn set_with(n: usize, clusters: &[(u32, std::ops::Range<u32>)]) -> ClusterSet {
        let cloud = PointCloud::from_xyz(&vec![[0.0; 3]; n]);
        let mut set = ClusterSet::new("t_0_0", n);
        for (id, r) in clusters {
            set.insert(Cluster::new(*id, r.clone().collect(), &cloud, ClusterSource::Watershed).unwrap()).unwrap();
        }
        set
    }

    #[test]
    fn no_clusters_all_ground() {
        let m = build_initial_labels(100, &set_with(100, &[]), &BTreeMap::new()).unwrap();
        assert_eq!(m.count(Semantic::Ground), 100);
        assert_eq!(m.instance_count(), 0);
    }

    #[test]
    fn one_single_cluster() {
        let set = set_with(1000, &[(1, 100..150)]);
        let m = build_initial_labels(1000, &set, &BTreeMap::from([(1, RatingClass::Single)])).unwrap();
        assert_eq!(m.count(Semantic::Tree), 50);
        assert_eq!(m.count(Semantic::Ground), 950);
        assert_eq!(m.instance_count(), 1);
    }

    #[test]
    fn multi_and_single() {
        let set = set_with(1000, &[(1, 0..30), (2, 500..550), (3, 600..620)]);
        let ratings = BTreeMap::from([(1, RatingClass::Multi), (2, RatingClass::Single), (3, RatingClass::NonTree)]);
        let m = build_initial_labels(1000, &set, &ratings).unwrap();
        assert_eq!(m.count(Semantic::Gray), 30);
        assert_eq!(m.count(Semantic::Tree), 50);
        assert_eq!(m.count(Semantic::Ground), 920);
        assert_eq!(m.instance_ids().len(), 1);
        m.check().unwrap();
    }

    #[test]
    fn unrated_cluster_is_an_error() {
        let set = set_with(10, &[(4, 0..3)]);
        assert!(matches!(build_initial_labels(10, &set, &BTreeMap::new()), Err(Error::UnratedCluster(4))));
    }

    #[test]
    fn label_dir_round_trip() {
        let set = set_with(40, &[(1, 0..10), (2, 10..20)]);
        let ratings = BTreeMap::from([(1, RatingClass::Single), (2, RatingClass::Multi)]);
        let m = build_initial_labels(40, &set, &ratings).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_label_dir(dir.path(), std::slice::from_ref(&m), 3, "test").unwrap();
        let (manifest, back) = read_label_dir(dir.path()).unwrap();
        assert_eq!(manifest.iteration, 3);
        assert_eq!(manifest.instance_count, 1);
        assert_eq!(back, vec![m]);
    }

    #[test]
    fn inconsistent_arrays_are_rejected() {
        assert!(LabelMap::from_parts("t", vec![Semantic::Gray], vec![3]).is_err());
        let bytes = LabelMap::new("t", 5).encode();
        assert!(LabelMap::decode("t", &bytes[..bytes.len() - 1]).is_err());
    }
}
