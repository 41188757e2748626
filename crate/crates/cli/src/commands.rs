//! Subcommand implementations. Machine output goes to files, logs to stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use arbor_core::config::Config;
use arbor_core::eval::{count_report, match_instances, write_count_csv, write_match_csv, write_trajectory_csv, ConfusionMatrix, EvalSummary, RatingSummary};
use arbor_core::pointcloud::{build_tiles_at, estimate_ground, ingest_xyz, normalize_heights, PointCloud, Tile, TileStore, XyzFormat};
use arbor_core::rating::{RatingClass, RatingLine, RatingStore};
use arbor_core::synth::{generate_forest, generate_rating_corpus, read_scene_truth, write_scene, SceneSpec};
use arbor_core::util::write_json_atomic;
use arbor_core::watershed::{read_cluster_dir, write_cluster_dir};
use arbor_pipeline::driver::load_inputs;
use arbor_pipeline::{read_metrics, run_loop, segment_tiles, simulate_ratings, RunDir, RunInputs, RunOptions};
use arbor_rater::{save_params, train_rater, TrainingReport};
use log::info;
use serde::Serialize;

use crate::server::{self, AppState, Catalog};

/// A problem with the invocation or a missing prerequisite step (exit 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_tiles(dir: &Path) -> Result<()> {
    if !TileStore::exists(dir) {
        return Err(usage(format!("no tile store at {}; run `tile` (or `synth`) first", dir.display())));
    }
    Ok(())
}

fn require_clusters(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(usage(format!("no clusters at {}; run `segment-init` first", dir.display())));
    }
    Ok(())
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub trees: usize,
    pub extent: f64,
    pub seed: u64,
}

pub fn synth(cfg: &Config, a: &SynthArgs) -> Result<()> {
    let spec = SceneSpec {
        trees: a.trees,
        extent: [a.extent, a.extent],
        seed: a.seed,
        ..SceneSpec::default()
    };
    let scene = generate_forest(&spec)?;
    let manifest = write_scene(&a.out, &scene, cfg.tiling.tile_size, &cfg.tiling.crs)?;
    info!(
        "scene with {} trees and {} confusers, {} points in {} tiles written to {}",
        scene.trees.len(),
        scene.confusers.len(),
        scene.cloud.len(),
        manifest.tiles.len(),
        a.out.display()
    );
    Ok(())
}

/// Parse an ASCII point file into a single-tile store (raw elevations).
pub fn ingest(cfg: &Config, input: &Path, out: &Path) -> Result<()> {
    if !input.is_file() {
        return Err(usage(format!("input file {} does not exist", input.display())));
    }
    let (cloud, report) = ingest_xyz(input, XyzFormat::from_path(input))?;
    let b = cloud.bounds();
    let size = (b.max[0] - b.min[0]).max(b.max[1] - b.min[1]).max(1e-6) * (1.0 + 1e-9) + 1e-6;
    let tile = Tile::new(0, 0, b.min[0], b.min[1], size, cloud);
    TileStore::new(out).write(&[tile], &cfg.tiling.crs)?;
    info!("{} points ingested ({} rows rejected) into {}", report.accepted, report.rejected, out.display());
    Ok(())
}

/// Re-tile a store at the configured tile size and normalize heights.
pub fn tile(cfg: &Config, input: &Path, out: &Path) -> Result<()> {
    require_tiles(input).map_err(|_| usage(format!("no point store at {}; run `ingest` first", input.display())))?;
    let mut cloud = PointCloud::new();
    for t in TileStore::new(input).read_all()? {
        for i in 0..t.len() {
            cloud.push(t.cloud.get(i));
        }
    }
    let b = cloud.bounds();
    let mut tiles = build_tiles_at(&cloud, cfg.tiling.tile_size, [b.min[0], b.min[1]])?;
    for t in &mut tiles {
        let ground = estimate_ground(t, cfg.tiling.ground_cell);
        normalize_heights(t, &ground);
    }
    TileStore::new(out).write(&tiles, &cfg.tiling.crs)?;
    info!("{} points in {} tiles written to {}", cloud.len(), tiles.len(), out.display());
    Ok(())
}

pub fn segment_init(cfg: &Config, tiles_dir: &Path, out: &Path) -> Result<usize> {
    require_tiles(tiles_dir)?;
    let tiles = TileStore::new(tiles_dir).read_all()?;
    let sets = segment_tiles(&tiles, &cfg.watershed)?;
    write_cluster_dir(out, &sets)?;
    let n = sets.iter().map(|s| s.len()).sum();
    info!("{n} clusters in {} tiles written to {}", sets.len(), out.display());
    Ok(n)
}

pub fn serve(cfg: &Config, run: &Path, tiles: &Path, clusters: &Path, port: Option<u16>) -> Result<()> {
    require_tiles(tiles)?;
    require_clusters(clusters)?;
    let catalog = Catalog::load(tiles, clusters, cfg.server.sample_seed)?;
    if catalog.is_empty() {
        bail!("no clusters to rate in {}", clusters.display());
    }
    let state = AppState::new(catalog, RunDir::new(run).ratings_path())?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::serve(state, port.unwrap_or(cfg.server.port), cfg.server.static_dir.as_deref()))
}

/// Append simulated operator ratings of a synthetic scene's clusters.
pub fn simulate(run: &Path, clusters: &Path, truth: &Path, sample: Option<usize>, seed: u64) -> Result<usize> {
    require_clusters(clusters)?;
    let (_, truth) = read_scene_truth(truth).with_context(|| format!("reading scene truth in {}", truth.display()))?;
    let sets = read_cluster_dir(clusters)?;
    let mut store = RatingStore::open(RunDir::new(run).ratings_path())?;
    let records = simulate_ratings(&sets, &truth, sample, seed);
    for r in &records {
        store.append(RatingLine::Rating(r.clone()))?;
    }
    info!("{} simulated ratings appended to {}", records.len(), store.path().display());
    Ok(records.len())
}

#[derive(Debug, Serialize)]
struct RaterMetrics {
    training: TrainingReport,
    held_out: Option<RatingSummary>,
}

fn summary(cm: ConfusionMatrix) -> Result<RatingSummary> {
    let (accuracy, weighted_accuracy) = cm.accuracy_metrics()?;
    Ok(RatingSummary {
        confusion: cm,
        accuracy,
        weighted_accuracy,
    })
}

pub enum RaterSource {
    /// Generated corpus with this many clusters per class, split 100/60 style
    /// into `train_per_class` and the rest held out.
    Corpus { per_class: usize, train_per_class: usize, seed: u64 },
    /// Human ratings of a run's initial clusters.
    Run { run: PathBuf, tiles: PathBuf, clusters: PathBuf },
}

type Examples = Vec<(PointCloud, RatingClass)>;

pub fn train_rater_cmd(cfg: &Config, source: &RaterSource, out: &Path, report: &Path) -> Result<RatingSummary> {
    let (examples, held_out): (Examples, Examples) = match source {
        RaterSource::Corpus {
            per_class,
            train_per_class,
            seed,
        } => {
            if train_per_class > per_class {
                return Err(usage("--train-per-class exceeds --corpus"));
            }
            let mut seen = [0usize; 3];
            generate_rating_corpus(*per_class, *seed).samples.into_iter().map(|s| (s.points, s.class)).partition(|(_, k)| {
                seen[k.index()] += 1;
                seen[k.index()] <= *train_per_class
            })
        }
        RaterSource::Run { run, tiles, clusters } => {
            require_tiles(tiles)?;
            require_clusters(clusters)?;
            let store = RatingStore::open(RunDir::new(run).ratings_path())?;
            if store.state().human_count() == 0 {
                return Err(usage(format!("no human ratings in {}; run serve and rate clusters first", run.display())));
            }
            let (tiles, sets) = load_inputs(&RunInputs {
                tiles: tiles.clone(),
                clusters: clusters.clone(),
                rater: None,
            })?;
            let mut ex = Vec::new();
            for r in store.state().human() {
                if let Some((t, c)) = tiles.iter().zip(&sets).find_map(|(t, s)| s.get(r.cluster_id).map(|c| (t, c))) {
                    ex.push((arbor_pipeline::cluster_cloud(t, c), r.class));
                }
            }
            (ex, Vec::new())
        }
    };
    let refs: Vec<(&PointCloud, RatingClass)> = examples.iter().map(|(c, k)| (c, *k)).collect();
    let (rater, training) = train_rater(&refs, &cfg.rater)?;
    save_params(out, &rater.params)?;
    let held = if held_out.is_empty() {
        None
    } else {
        let refs: Vec<(&PointCloud, RatingClass)> = held_out.iter().map(|(c, k)| (c, *k)).collect();
        Some(summary(rater.confusion(&refs)?)?)
    };
    let result = match (&held, &training.confusion) {
        (Some(h), _) => h.clone(),
        (None, Some(cm)) => summary(*cm)?,
        (None, None) => bail!("no validation or held-out clusters to score the rating model on"),
    };
    write_json_atomic(report, &RaterMetrics { training, held_out: held })?;
    info!(
        "rating model written to {}: accuracy {:.3}, weighted accuracy {:.3}",
        out.display(),
        result.accuracy,
        result.weighted_accuracy
    );
    Ok(result)
}

pub fn run_loop_cmd(cfg: &Config, run: &Path, inputs: &RunInputs, halt_after: Option<usize>) -> Result<()> {
    require_tiles(&inputs.tiles)?;
    require_clusters(&inputs.clusters)?;
    let report = run_loop(&RunDir::new(run), inputs, cfg, &RunOptions { halt_after }).map_err(|e| match e {
        arbor_pipeline::Error::MissingRatings(_) | arbor_pipeline::Error::MissingRatedClass(_) => usage(e.to_string()),
        e => e.into(),
    })?;
    let s = &report.state;
    info!(
        "iteration {} done: {} confirmed instances{}",
        s.iteration,
        s.total_instances(),
        s.stopped.map_or(String::new(), |r| format!(", stopped ({r:?})"))
    );
    Ok(())
}

/// Compare the last iteration's predictions with the scene truth.
pub fn eval(run: &Path, gt: &Path, out: Option<&Path>) -> Result<EvalSummary> {
    let dir = RunDir::new(run);
    let Some(k) = dir.latest_iteration()? else {
        return Err(usage(format!("{} has no completed iteration; run `loop` first", run.display())));
    };
    let (_, truth) = read_scene_truth(gt).with_context(|| format!("reading scene truth in {}", gt.display()))?;
    let iter = dir.iter_dir(k);
    let pred = read_cluster_dir(&iter.join("clusters"))?;
    let ratings = read_model_ratings(&iter.join("model_ratings.jsonl"))?;
    let mut matches = Vec::new();
    let mut counts = Vec::new();
    for p in &pred {
        let Some(t) = truth.iter().find(|t| t.tile() == p.tile) else {
            bail!("tile {} is not part of the scene in {}", p.tile, gt.display());
        };
        matches.push(match_instances(&t.trees, p));
        let classes = ratings.get(&p.tile).cloned().unwrap_or_default();
        counts.push(count_report("synthetic", p, &classes, &t.trees));
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run.join("eval"));
    write_match_csv(&out.join("metrics.csv"), &matches)?;
    write_count_csv(&out.join("counts.csv"), &counts)?;
    let rows = read_metrics(&dir.metrics_path())?;
    let trajectory: Vec<(usize, String, f64)> = rows
        .iter()
        .flat_map(|r| {
            let p = r.proportions();
            [
                (r.iteration, "avg_trees_per_tile".to_string(), r.avg_trees_per_tile),
                (r.iteration, "pct_single".to_string(), p[0]),
                (r.iteration, "pct_multi".to_string(), p[1]),
                (r.iteration, "pct_nontree".to_string(), p[2]),
                (r.iteration, "new_instances".to_string(), r.new_instances as f64),
            ]
        })
        .collect();
    write_trajectory_csv(&out.join("trajectory.csv"), &trajectory)?;
    let summary = EvalSummary::new(&matches, counts, None);
    summary.write(&out.join("summary.json"))?;
    info!(
        "{} of {} ground-truth trees matched at IoU >= 0.5 ({:.1}%), reports in {}",
        summary.detected,
        summary.gt_instances,
        100.0 * summary.detection_rate,
        out.display()
    );
    Ok(summary)
}

fn read_model_ratings(path: &Path) -> Result<BTreeMap<String, BTreeMap<u32, RatingClass>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: BTreeMap<String, BTreeMap<u32, RatingClass>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: arbor_pipeline::driver::TileRating = serde_json::from_str(line).with_context(|| format!("bad line in {}", path.display()))?;
        out.entry(r.tile).or_default().insert(r.record.cluster_id, r.record.class);
    }
    Ok(out)
}
