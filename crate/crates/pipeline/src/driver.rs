//! The rate / pseudo-label / retrain loop.
//!
//! Iteration 0 builds pseudo labels from the initial clusters (human ratings
//! where present, model ratings elsewhere) and fits the backend. Every later
//! iteration predicts instances, rates them all with the rating model,
//! accepts and merges Single candidates, retrains the backend for a few
//! epochs and records a metrics row. Each iteration is staged and published
//! with one rename, so a killed run resumes from the last published one.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use arbor_core::backend::{ExternalBackend, ReferenceBackend, SegmentationBackend};
use arbor_core::config::Config;
use arbor_core::labels::{accept_candidate, AcceptRules, build_initial_labels, merge_candidate, read_label_dir, write_label_dir, Decision, LabelMap};
use arbor_core::pointcloud::{PointCloud, Tile, TileStore};
use arbor_core::rating::{RatingClass, RatingRecord, RatingSource, RatingStore};
use arbor_core::util::{read_json, write_atomic, write_json_atomic};
use arbor_core::watershed::{read_cluster_dir, write_cluster_dir, Cluster, ClusterSet, ClusterSource};
use arbor_rater::{load_params, save_params, train_rater, Rater};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{read_metrics, stop_check, write_metrics, MetricsRow, StopReason};
use crate::run::{RunDir, RunInputs};
use crate::segment::cluster_cloud;

const RATER_FILE: &str = "rater.ratr";

#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    /// Last completed iteration.
    pub iteration: usize,
    pub rows: Vec<MetricsRow>,
    /// (new instances, confirmed instances) of iterations 1..=iteration.
    pub history: Vec<(usize, usize)>,
    pub labels: Vec<LabelMap>,
    pub stopped: Option<StopReason>,
}

impl LoopState {
    pub fn total_instances(&self) -> usize {
        self.labels.iter().map(LabelMap::instance_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StateFile {
    iteration: usize,
    history: Vec<(usize, usize)>,
    stopped: Option<StopReason>,
    total_instances: usize,
    /// Rejected Single candidates by failed test, this iteration.
    rejections: BTreeMap<String, usize>,
}

/// A model or human rating of one cluster of one tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRating {
    pub tile: String,
    #[serde(flatten)]
    pub record: RatingRecord,
}

/// What one iteration produced besides the new state.
#[derive(Debug, Clone, Default)]
pub struct IterationOutput {
    pub clusters: Vec<ClusterSet>,
    pub ratings: Vec<TileRating>,
    pub accepted: usize,
    pub rejections: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Return after publishing this iteration even if the stop rule has not
    /// fired (simulates an interruption).
    pub halt_after: Option<usize>,
}

#[derive(Debug)]
pub struct LoopReport {
    pub state: LoopState,
    pub last_dir: PathBuf,
}

pub fn iteration_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Everything an iteration reads besides the state.
pub struct Context {
    pub cfg: Config,
    pub tiles: Vec<Tile>,
    pub rater: Rater,
    pub backend: Box<dyn SegmentationBackend>,
}

pub fn make_backend(cfg: &Config, tiles_dir: &Path, work_dir: &Path) -> Box<dyn SegmentationBackend> {
    match &cfg.backend.command {
        Some(cmd) => Box::new(ExternalBackend {
            command: cmd.clone(),
            timeout: Duration::from_secs(cfg.backend.timeout_secs),
            tiles_dir: tiles_dir.to_path_buf(),
            work_dir: work_dir.to_path_buf(),
        }),
        None => Box::new(ReferenceBackend::new(cfg.backend.clone(), cfg.run.seed)),
    }
}

/// Rate every cluster of every tile with the model, one batch for all.
pub fn rate_clusters(rater: &Rater, tiles: &[Tile], sets: &[ClusterSet]) -> Result<Vec<BTreeMap<u32, RatingRecord>>> {
    let mut keys = Vec::new();
    let mut clouds: Vec<PointCloud> = Vec::new();
    for (t, (tile, set)) in tiles.iter().zip(sets).enumerate() {
        for c in set.iter() {
            keys.push((t, c.id));
            clouds.push(cluster_cloud(tile, c));
        }
    }
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let probs = if refs.is_empty() { Vec::new() } else { rater.predict_many(&refs)? };
    let mut out = vec![BTreeMap::new(); tiles.len()];
    for ((t, id), p) in keys.into_iter().zip(probs) {
        let class = arbor_rater::train::argmax(&p);
        out[t].insert(id, RatingRecord::model(id, class, p[class.index()]));
    }
    Ok(out)
}

fn class_counts<'a>(classes: impl IntoIterator<Item = &'a RatingClass>) -> [usize; 3] {
    let mut c = [0; 3];
    classes.into_iter().for_each(|k| c[k.index()] += 1);
    c
}

/// Human-rated initial clusters as rater training examples.
fn human_examples(tiles: &[Tile], initial: &[ClusterSet], store: &RatingStore) -> Vec<(PointCloud, RatingClass)> {
    let mut out = Vec::new();
    let mut unknown = 0;
    for r in store.state().human() {
        let found = tiles.iter().zip(initial).find_map(|(t, s)| s.get(r.cluster_id).map(|c| (t, c)));
        match found {
            Some((t, c)) => out.push((cluster_cloud(t, c), r.class)),
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        warn!("{unknown} human ratings refer to clusters that are not in the initial set; ignored");
    }
    out
}

/// Iteration 0: labels from the initial clusters and a first backend fit.
pub fn initialize(ctx: &mut Context, initial: &[ClusterSet], store: &RatingStore) -> Result<(LoopState, IterationOutput)> {
    let model = rate_clusters(&ctx.rater, &ctx.tiles, initial)?;
    let mut ratings = Vec::new();
    let mut labels = Vec::with_capacity(ctx.tiles.len());
    let mut effective_classes = Vec::new();
    for ((tile, set), model) in ctx.tiles.iter().zip(initial).zip(model) {
        let mut effective = BTreeMap::new();
        for c in set.iter() {
            let record = match store.state().get(c.id, RatingSource::Human) {
                Some(h) => h.clone(),
                None => model[&c.id].clone(),
            };
            effective.insert(c.id, record.class);
            effective_classes.push(record.class);
            ratings.push(TileRating {
                tile: tile.name(),
                record,
            });
        }
        labels.push(build_initial_labels(tile.len(), set, &effective)?);
    }
    let seed = iteration_seed(ctx.cfg.run.seed, 0);
    ctx.backend.train(&ctx.tiles, &labels, ctx.cfg.backend.initial_epochs, seed)?;
    let total: usize = labels.iter().map(LabelMap::instance_count).sum();
    let row = MetricsRow::new(0, total, ctx.tiles.len(), class_counts(&effective_classes), total);
    info!("iteration 0: {total} instances from {} initial clusters", effective_classes.len());
    let state = LoopState {
        iteration: 0,
        rows: vec![row],
        history: Vec::new(),
        labels,
        stopped: None,
    };
    let output = IterationOutput {
        clusters: initial.to_vec(),
        ratings,
        accepted: total,
        rejections: BTreeMap::new(),
    };
    Ok((state, output))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateOutcome {
    pub accepted: usize,
    /// Rejected candidates per failed test; a candidate failing several
    /// tests counts once under each.
    pub rejections: BTreeMap<String, usize>,
}

/// Offer every Single-rated candidate of one tile, in id order, to the
/// acceptance rules and merge the accepted ones.
pub fn apply_candidates(
    tile: &Tile,
    labels: &mut LabelMap,
    candidates: &ClusterSet,
    classes: &BTreeMap<u32, RatingClass>,
    rules: &AcceptRules,
) -> Result<CandidateOutcome> {
    let before = labels.instance_ids();
    let mut out = CandidateOutcome::default();
    for c in candidates.iter().filter(|c| classes.get(&c.id) == Some(&RatingClass::Single)) {
        match accept_candidate(c, labels, &tile.cloud, rules) {
            Decision::Accept => {
                merge_candidate(c, labels, &tile.cloud);
                out.accepted += 1;
            }
            Decision::Reject(reasons) => {
                let kinds: BTreeSet<&str> = reasons.iter().map(|r| r.kind()).collect();
                for kind in kinds {
                    *out.rejections.entry(kind.to_string()).or_default() += 1;
                }
            }
        }
    }
    if !before.is_subset(&labels.instance_ids()) {
        return Err(Error::Inconsistent(format!("an instance of {} disappeared", tile.name())));
    }
    labels.check()?;
    Ok(out)
}

/// One loop iteration. Pure with respect to the run directory.
pub fn run_iteration(ctx: &mut Context, state: &LoopState) -> Result<(LoopState, IterationOutput)> {
    let k = state.iteration + 1;
    let seed = iteration_seed(ctx.cfg.run.seed, k);
    let predicted = ctx.backend.predict(&ctx.tiles, seed)?;
    if predicted.len() != ctx.tiles.len() {
        return Err(Error::Inconsistent(format!("backend returned {} cluster sets for {} tiles", predicted.len(), ctx.tiles.len())));
    }
    for (t, s) in ctx.tiles.iter().zip(&predicted) {
        if s.point_count() != t.len() || s.tile != t.name() {
            return Err(Error::Inconsistent(format!("backend clusters for {} do not match the tile", t.name())));
        }
    }
    let model = rate_clusters(&ctx.rater, &ctx.tiles, &predicted)?;

    let mut labels = state.labels.clone();
    let mut accepted = 0;
    let mut rejections: BTreeMap<String, usize> = BTreeMap::new();
    let mut ratings = Vec::new();
    for (t, tile) in ctx.tiles.iter().enumerate() {
        let classes: BTreeMap<u32, RatingClass> = model[t].iter().map(|(&id, r)| (id, r.class)).collect();
        let outcome = apply_candidates(tile, &mut labels[t], &predicted[t], &classes, &ctx.cfg.labels)?;
        accepted += outcome.accepted;
        for (kind, n) in outcome.rejections {
            *rejections.entry(kind).or_default() += n;
        }
        ratings.extend(predicted[t].iter().map(|c| TileRating {
            tile: tile.name(),
            record: model[t][&c.id].clone(),
        }));
    }
    ctx.backend.train(&ctx.tiles, &labels, ctx.cfg.run.epochs_per_iteration, seed)?;

    let total: usize = labels.iter().map(LabelMap::instance_count).sum();
    let counts = class_counts(ratings.iter().map(|r| &r.record.class));
    let mut rows = state.rows.clone();
    rows.push(MetricsRow::new(k, total, ctx.tiles.len(), counts, accepted));
    let mut history = state.history.clone();
    history.push((accepted, total));
    let stopped = stop_check(&history, &ctx.cfg.run);
    info!(
        "iteration {k}: {} candidates, {accepted} accepted, {total} instances, rejections {rejections:?}{}",
        ratings.len(),
        stopped.map_or(String::new(), |r| format!(", stop: {r:?}"))
    );
    let state = LoopState {
        iteration: k,
        rows,
        history,
        labels,
        stopped,
    };
    Ok((
        state,
        IterationOutput {
            clusters: predicted,
            ratings,
            accepted,
            rejections,
        },
    ))
}

fn persist(run: &RunDir, ctx: &Context, state: &LoopState, output: &IterationOutput) -> Result<PathBuf> {
    let k = state.iteration;
    let dir = run.stage(k)?;
    let provenance = if k == 0 { "initial clusters" } else { "loop" };
    write_label_dir(&dir.join("labels"), &state.labels, k, provenance)?;
    write_cluster_dir(&dir.join("clusters"), &output.clusters)?;
    ctx.backend.save(&dir.join("params").join("backend"))?;
    if k == 0 {
        save_params(&dir.join("params").join(RATER_FILE), &ctx.rater.params)?;
    }
    let mut jsonl = String::new();
    for r in &output.ratings {
        jsonl.push_str(&serde_json::to_string(r).map_err(arbor_core::Error::from)?);
        jsonl.push('\n');
    }
    write_atomic(&dir.join("model_ratings.jsonl"), jsonl.as_bytes())?;
    write_metrics(&dir.join("metrics.csv"), &state.rows)?;
    write_json_atomic(
        &dir.join("state.json"),
        &StateFile {
            iteration: k,
            history: state.history.clone(),
            stopped: state.stopped,
            total_instances: state.total_instances(),
            rejections: output.rejections.clone(),
        },
    )?;
    let published = run.commit(k, &dir)?;
    write_metrics(&run.metrics_path(), &state.rows)?;
    Ok(published)
}

fn load_state(run: &RunDir, k: usize) -> Result<LoopState> {
    let dir = run.iter_dir(k);
    let file: StateFile = read_json(&dir.join("state.json"))?;
    let (_, labels) = read_label_dir(&dir.join("labels"))?;
    let rows = read_metrics(&dir.join("metrics.csv"))?;
    if file.iteration != k || rows.len() != k + 1 {
        return Err(Error::Inconsistent(format!("{} is incomplete", dir.display())));
    }
    Ok(LoopState {
        iteration: k,
        rows,
        history: file.history,
        labels,
        stopped: file.stopped,
    })
}

/// Tiles and initial clusters of a run, aligned by tile name.
pub fn load_inputs(inputs: &RunInputs) -> Result<(Vec<Tile>, Vec<ClusterSet>)> {
    let tiles = TileStore::new(&inputs.tiles).read_all()?;
    let mut by_name: BTreeMap<String, ClusterSet> =
        read_cluster_dir(&inputs.clusters)?.into_iter().map(|s| (s.tile.clone(), s)).collect();
    let mut initial = Vec::with_capacity(tiles.len());
    for t in &tiles {
        let set = by_name.remove(&t.name()).unwrap_or_else(|| ClusterSet::new(t.name(), t.len()));
        if set.point_count() != t.len() {
            return Err(Error::Inconsistent(format!("clusters of {} were computed on a different tile", t.name())));
        }
        initial.push(set);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Inconsistent(format!("clusters for unknown tile {extra}")));
    }
    Ok((tiles, initial))
}

/// Run (or resume) the loop in `run` until the stop rule fires.
pub fn run_loop(run: &RunDir, inputs: &RunInputs, cfg: &Config, opts: &RunOptions) -> Result<LoopReport> {
    let _lock = run.lock()?;
    run.prepare(inputs, cfg)?;
    run.clean_staging()?;
    let (tiles, initial) = load_inputs(inputs)?;
    let backend = make_backend(cfg, &inputs.tiles, &run.work_dir());

    let latest = run.latest_iteration()?;
    let (mut ctx, mut state, mut last_dir) = match latest {
        Some(k) => {
            info!("resuming {} after iteration {k}", run.root.display());
            let mut backend = backend;
            backend.load(&run.iter_dir(k).join("params").join("backend"))?;
            let rater = Rater::new(load_params(&run.iter_dir(0).join("params").join(RATER_FILE))?);
            let ctx = Context {
                cfg: cfg.clone(),
                tiles,
                rater,
                backend,
            };
            (ctx, load_state(run, k)?, run.iter_dir(k))
        }
        None => {
            let store = RatingStore::open(run.ratings_path())?;
            if store.state().human_count() == 0 {
                return Err(Error::MissingRatings(run.ratings_path()));
            }
            let rater = match &inputs.rater {
                Some(path) => Rater::new(load_params(path)?),
                None => {
                    let examples = human_examples(&tiles, &initial, &store);
                    let refs: Vec<(&PointCloud, RatingClass)> = examples.iter().map(|(c, k)| (c, *k)).collect();
                    info!("training the rating model on {} human ratings", refs.len());
                    match train_rater(&refs, &cfg.rater) {
                        Ok((rater, _)) => rater,
                        Err(arbor_rater::Error::MissingClass(c)) => return Err(Error::MissingRatedClass(c)),
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            let mut ctx = Context {
                cfg: cfg.clone(),
                tiles,
                rater,
                backend,
            };
            let (state, output) = initialize(&mut ctx, &initial, &store)?;
            let dir = persist(run, &ctx, &state, &output)?;
            (ctx, state, dir)
        }
    };

    while state.stopped.is_none() && opts.halt_after.is_none_or(|h| state.iteration < h) {
        let (next, output) = run_iteration(&mut ctx, &state)?;
        last_dir = persist(run, &ctx, &next, &output)?;
        state = next;
    }
    Ok(LoopReport { state, last_dir })
}

/// Confirmed instances of a label map as a cluster set.
pub fn instances_as_clusters(tile: &Tile, labels: &LabelMap) -> Result<ClusterSet> {
    let mut set = ClusterSet::new(tile.name(), tile.len());
    for (id, members) in labels.all_members() {
        set.insert(Cluster::new(id, members, &tile.cloud, ClusterSource::Backend)?)?;
    }
    Ok(set)
}
