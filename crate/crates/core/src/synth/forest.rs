use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::truth::{ObjectTruth, SceneTruth, TileTruthEntry};
use super::{gaussian, random_confuser, random_tree, ConfuserKind, ConfuserSpec, Footprints, Object, SceneSpec, TreeSpec};
use crate::error::{Error, Result};
use crate::labels::{write_label_dir, LabelMap, Semantic};
use crate::pointcloud::{build_tiles_at, tile_groups, PointCloud, TileManifest, TileStore, HAG_FLOOR};
use crate::util::write_json_atomic;
use crate::watershed::{write_cluster_dir, Cluster, ClusterSet, ClusterSource};

/// A generated scene. `tree_of[i]` is the 1-based tree index of point `i`
/// (0 for none); `confuser_of` likewise for rocks and shrubs.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub cloud: PointCloud,
    pub trees: Vec<TreeSpec>,
    pub confusers: Vec<ConfuserSpec>,
    pub tree_of: Vec<u32>,
    pub confuser_of: Vec<u32>,
}

impl Scene {
    /// One truth cluster per tree that received points; ids are tree ids.
    pub fn truth_clusters(&self, tile: &str) -> ClusterSet {
        owner_set(tile, &self.cloud, &self.tree_of)
    }

    pub fn confuser_clusters(&self, tile: &str) -> ClusterSet {
        owner_set(tile, &self.cloud, &self.confuser_of)
    }

    /// Tree points labeled Tree with their tree id, everything else Ground.
    pub fn truth_labels(&self, tile: &str) -> LabelMap {
        truth_labels(tile, &self.tree_of)
    }
}

fn owner_set(tile: &str, cloud: &PointCloud, owner: &[u32]) -> ClusterSet {
    let mut groups: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
    for (i, &o) in owner.iter().enumerate() {
        if o != 0 {
            groups.entry(o).or_default().push(i as u32);
        }
    }
    let mut set = ClusterSet::new(tile, cloud.len());
    for (id, members) in groups {
        let c = Cluster::new(id, members, cloud, ClusterSource::Truth).expect("non-empty group");
        set.insert(c).expect("owner groups are disjoint");
    }
    set
}

fn truth_labels(tile: &str, tree_of: &[u32]) -> LabelMap {
    let semantic = tree_of.iter().map(|&t| if t != 0 { Semantic::Tree } else { Semantic::Ground }).collect();
    LabelMap::from_parts(tile, semantic, tree_of.to_vec()).expect("consistent truth labels")
}

/// Dart throwing with a spatial hash; gives up after a bounded number of
/// attempts.
fn place_trees(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<TreeSpec>> {
    let s = spec.min_spacing;
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut trees: Vec<TreeSpec> = Vec::with_capacity(spec.trees);
    let budget = 1000 * spec.trees + 10_000;
    let mut attempts = 0;
    while trees.len() < spec.trees && attempts < budget {
        attempts += 1;
        let x = spec.origin[0] + rng.random_range(0.0..spec.extent[0]);
        let y = spec.origin[1] + rng.random_range(0.0..spec.extent[1]);
        let key = ((x / s).floor() as i64, (y / s).floor() as i64);
        let mut free = true;
        'outer: for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(v) = grid.get(&(key.0 + dx, key.1 + dy)) {
                    if v.iter().any(|&k| (trees[k].x - x).hypot(trees[k].y - y) < s) {
                        free = false;
                        break 'outer;
                    }
                }
            }
        }
        if free {
            grid.entry(key).or_default().push(trees.len());
            trees.push(random_tree(rng, spec, x, y));
        }
    }
    if trees.len() < spec.trees {
        return Err(Error::InfeasiblePlacement {
            placed: trees.len(),
            requested: spec.trees,
            spacing: spec.min_spacing,
        });
    }
    Ok(trees)
}

/// Rocks and shrubs go into gaps: never closer to a stem than its crown
/// radius, never overlapping another confuser.
fn place_confusers(spec: &SceneSpec, trees: &[TreeSpec], rng: &mut ChaCha8Rng) -> Result<Vec<ConfuserSpec>> {
    let kinds: Vec<ConfuserKind> = std::iter::repeat_n(ConfuserKind::Rock, spec.rocks)
        .chain(std::iter::repeat_n(ConfuserKind::Shrub, spec.shrubs))
        .collect();
    let mut out: Vec<ConfuserSpec> = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let mut placed = false;
        for _ in 0..2000 {
            let x = spec.origin[0] + rng.random_range(0.0..spec.extent[0]);
            let y = spec.origin[1] + rng.random_range(0.0..spec.extent[1]);
            let c = random_confuser(rng, spec, kind, x, y);
            let clear_of_trees = trees.iter().all(|t| (t.x - x).hypot(t.y - y) > t.crown_radius + 0.25 * c.radius);
            let clear_of_others = out.iter().all(|o| (o.x - x).hypot(o.y - y) > o.radius + c.radius);
            if clear_of_trees && clear_of_others {
                out.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasiblePlacement {
                placed: out.len(),
                requested: spec.rocks + spec.shrubs,
                spacing: spec.min_spacing,
            });
        }
    }
    Ok(out)
}

/// Generate a scene. Identical specs (including the seed) give bit-identical
/// output.
pub fn generate_forest(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let trees = if spec.fixed_trees.is_empty() {
        place_trees(spec, &mut rng)?
    } else {
        spec.fixed_trees.clone()
    };
    let confusers = if spec.fixed_confusers.is_empty() {
        place_confusers(spec, &trees, &mut rng)?
    } else {
        spec.fixed_confusers.clone()
    };
    let objects: Vec<Object> = trees
        .iter()
        .map(|&t| Object::Tree(t))
        .chain(confusers.iter().map(|&c| Object::Confuser(c)))
        .collect();
    let footprints = Footprints::build(&objects, spec.origin, spec.extent);

    let pulses = (spec.density * spec.extent[0] * spec.extent[1]).round() as usize;
    let mut cloud = PointCloud::with_capacity(pulses);
    let mut tree_of = Vec::with_capacity(pulses);
    let mut confuser_of = Vec::with_capacity(pulses);
    for _ in 0..pulses {
        let x = spec.origin[0] + rng.random_range(0.0..spec.extent[0]);
        let y = spec.origin[1] + rng.random_range(0.0..spec.extent[1]);
        let hit = footprints.trace(&objects, x, y, spec.transmission, spec.interior_fraction, &mut rng);
        let h = hit.height + gaussian(&mut rng, spec.noise_sigma);
        cloud.x.push(x);
        cloud.y.push(y);
        cloud.z.push(spec.ground_z(x, y) + h);
        cloud.hag.push((h as f32).max(HAG_FLOOR));
        let (t, c) = match hit.object {
            Some(k) if k < trees.len() => (k as u32 + 1, 0),
            Some(k) => (0, (k - trees.len()) as u32 + 1),
            None => (0, 0),
        };
        tree_of.push(t);
        confuser_of.push(c);
    }
    log::debug!(
        "generated {} points, {} trees, {} confusers (seed {})",
        cloud.len(),
        trees.len(),
        confusers.len(),
        spec.seed
    );
    Ok(Scene {
        spec: spec.clone(),
        cloud,
        trees,
        confusers,
        tree_of,
        confuser_of,
    })
}

/// Write a scene as a tile store plus truth:
/// `<dir>/tiles/`, `<dir>/truth/{labels,clusters,confusers}/` and
/// `<dir>/scene_truth.json`.
pub fn write_scene(dir: &Path, scene: &Scene, tile_size: f64, crs: &str) -> Result<TileManifest> {
    if scene.cloud.is_empty() {
        return Err(Error::InvalidArgument("scene has no points".into()));
    }
    let tiles = build_tiles_at(&scene.cloud, tile_size, scene.spec.origin)?;
    let groups = tile_groups(&scene.cloud, tile_size, scene.spec.origin);
    let manifest = TileStore::new(dir.join("tiles")).write(&tiles, crs)?;

    let mut labels = Vec::new();
    let mut trees = Vec::new();
    let mut confusers = Vec::new();
    let mut tile_truth = Vec::new();
    for (tile, members) in tiles.iter().zip(groups.values()) {
        let name = tile.name();
        let t_of: Vec<u32> = members.iter().map(|&i| scene.tree_of[i]).collect();
        let c_of: Vec<u32> = members.iter().map(|&i| scene.confuser_of[i]).collect();
        let tt = owner_set(&name, &tile.cloud, &t_of);
        tile_truth.push(TileTruthEntry::new(&name, &tt, &owner_set(&name, &tile.cloud, &c_of)));
        labels.push(truth_labels(&name, &t_of));
        trees.push(tt);
        confusers.push(owner_set(&name, &tile.cloud, &c_of));
    }
    let truth = dir.join("truth");
    write_label_dir(&truth.join("labels"), &labels, 0, "synthetic truth")?;
    write_cluster_dir(&truth.join("clusters"), &trees)?;
    write_cluster_dir(&truth.join("confusers"), &confusers)?;

    let count = |owner: &[u32], id: u32| owner.iter().filter(|&&o| o == id).count();
    let summary = SceneTruth {
        spec: scene.spec.clone(),
        points: scene.cloud.len(),
        trees: scene
            .trees
            .iter()
            .enumerate()
            .map(|(k, t)| ObjectTruth::tree(k as u32 + 1, t, count(&scene.tree_of, k as u32 + 1)))
            .collect(),
        confusers: scene
            .confusers
            .iter()
            .enumerate()
            .map(|(k, c)| ObjectTruth::confuser(k as u32 + 1, c, count(&scene.confuser_of, k as u32 + 1)))
            .collect(),
        tiles: tile_truth,
    };
    write_json_atomic(&dir.join("scene_truth.json"), &summary)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::CrownShape;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            extent: [40.0, 40.0],
            trees: 8,
            rocks: 2,
            shrubs: 3,
            seed: 11,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn empty_scene_is_ground_only() {
        let spec = SceneSpec {
            trees: 0,
            rocks: 0,
            shrubs: 0,
            extent: [20.0, 20.0],
            ..SceneSpec::default()
        };
        let s = generate_forest(&spec).unwrap();
        assert_eq!(s.cloud.len(), (38.0f64 * 400.0) as usize);
        assert!(s.truth_clusters("t").is_empty());
        assert!(s.tree_of.iter().all(|&t| t == 0));
    }

    #[test]
    fn crown_counts_match_area_times_density() {
        // ten well separated cones, no confusers, no pass-through
        let trees: Vec<TreeSpec> = (0..10)
            .map(|k| TreeSpec {
                x: 10.0 + 20.0 * (k % 5) as f64,
                y: 25.0 + 50.0 * (k / 5) as f64,
                height: 12.0,
                crown_radius: 3.0,
                crown_base: 4.0,
                shape: CrownShape::Cone,
            })
            .collect();
        let spec = SceneSpec {
            fixed_trees: trees,
            rocks: 0,
            shrubs: 0,
            transmission: 0.0,
            ..SceneSpec::default()
        };
        let s = generate_forest(&spec).unwrap();
        let gt = s.truth_clusters("t");
        assert_eq!(gt.len(), 10);
        let expected = std::f64::consts::PI * 9.0 * 38.0;
        for c in gt.iter() {
            let rel = (c.len() as f64 - expected).abs() / expected;
            assert!(rel < 0.2, "cluster {} has {} points, expected {expected}", c.id, c.len());
        }
        let realized = s.cloud.len() as f64 / 1e4;
        assert!((realized - 38.0).abs() / 38.0 < 0.1);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_forest(&small_spec()).unwrap();
        let b = generate_forest(&small_spec()).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert_eq!(a.tree_of, b.tree_of);
        let c = generate_forest(&SceneSpec { seed: 12, ..small_spec() }).unwrap();
        assert_ne!(a.cloud, c.cloud);
    }

    #[test]
    fn infeasible_spacing_errors() {
        let spec = SceneSpec {
            extent: [10.0, 10.0],
            trees: 50,
            min_spacing: 5.0,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_forest(&spec), Err(Error::InfeasiblePlacement { .. })));
    }

    #[test]
    fn truth_points_lie_inside_their_crowns() {
        let s = generate_forest(&small_spec()).unwrap();
        for i in 0..s.cloud.len() {
            let t = s.tree_of[i];
            if t == 0 {
                continue;
            }
            let tree = s.trees[t as usize - 1];
            let d = (s.cloud.x[i] - tree.x).hypot(s.cloud.y[i] - tree.y);
            assert!(d <= tree.crown_radius + 1e-9);
            assert!((s.cloud.hag[i] as f64) < tree.height + 0.5);
        }
        assert_eq!(s.truth_labels("t").count(Semantic::Tree), s.tree_of.iter().filter(|&&t| t != 0).count());
    }
}
