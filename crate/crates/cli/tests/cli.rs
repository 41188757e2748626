use std::path::Path;
use std::process::{Command, Output};

use arbor_core::pointcloud::TileStore;
use arbor_core::watershed::read_cluster_dir;

const SMALL: [&str; 18] = [
    "--set",
    "rater.resolution=16",
    "--set",
    "rater.channels=[4,4,8,8,8]",
    "--set",
    "rater.head_channels=4",
    "--set",
    "rater.mlp_hidden=8",
    "--set",
    "rater.epochs=3",
    "--set",
    "backend.initial_epochs=4",
    "--set",
    "loop.max_iterations=2",
    "--set",
    "loop.epochs_per_iteration=2",
    "--set",
    "server.port=0",
];

fn arbor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arbor")).args(args).env("RUST_LOG", "info").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = arbor(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synthetic_scene_through_loop_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, clusters, run) = (dir.path().join("scene"), dir.path().join("clusters"), dir.path().join("run"));
    let tiles = scene.join("tiles");
    ok(&["synth", "--out", p(&scene), "--trees", "30", "--extent", "50", "--seed", "8"]);
    ok(&["segment-init", "--tiles", p(&tiles), "--out", p(&clusters)]);
    ok(&["simulate-ratings", "--run", p(&run), "--clusters", p(&clusters), "--truth", p(&scene)]);

    let rater = dir.path().join("rater.ratr");
    let mut args = vec!["train-rater", "--out", p(&rater), "--corpus", "8", "--train-per-class", "4"];
    args.extend(SMALL);
    ok(&args);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(rater.with_extension("json")).unwrap()).unwrap();
    assert!(report["held_out"]["accuracy"].is_number());

    let mut args = vec!["loop", "--run", p(&run), "--tiles", p(&tiles), "--clusters", p(&clusters), "--rater", p(&rater)];
    args.extend(SMALL);
    ok(&args);
    assert!(run.join("iter_0").is_dir());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() >= 2, "{metrics}");

    // A second invocation resumes from the snapshot without the inputs.
    ok(&["loop", "--run", p(&run)]);

    ok(&["eval", "--run", p(&run), "--gt", p(&scene)]);
    for f in ["metrics.csv", "counts.csv", "trajectory.csv", "summary.json"] {
        assert!(run.join("eval").join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("eval/summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn watershed_finds_most_trees_of_a_small_scene() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, clusters) = (dir.path().join("scene"), dir.path().join("clusters"));
    ok(&["synth", "--out", p(&scene), "--trees", "20", "--extent", "60"]);
    ok(&["segment-init", "--tiles", p(&scene.join("tiles")), "--out", p(&clusters)]);
    let n: usize = read_cluster_dir(&clusters).unwrap().iter().map(|s| s.len()).sum();
    assert!(n >= 15, "{n} clusters");
}

#[test]
fn loop_without_ratings_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, clusters) = (dir.path().join("scene"), dir.path().join("clusters"));
    ok(&["synth", "--out", p(&scene), "--trees", "10", "--extent", "40"]);
    ok(&["segment-init", "--tiles", p(&scene.join("tiles")), "--out", p(&clusters)]);
    let out = arbor(&["loop", "--run", p(&dir.path().join("run")), "--tiles", p(&scene.join("tiles")), "--clusters", p(&clusters)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run serve and rate clusters first"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(arbor(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(arbor(&["--help"]).status.code(), Some(0));
    let out = arbor(&["synth", "--out", p(dir.path()), "--set", "nope.x=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
    assert_eq!(arbor(&["eval", "--run", p(&dir.path().join("run")), "--gt", p(dir.path())]).status.code(), Some(1));
    assert_eq!(arbor(&["ingest", "--input", p(&dir.path().join("missing.xyz")), "--out", p(dir.path())]).status.code(), Some(1));
}

fn plane(x: f64, y: f64) -> f64 {
    300.0 + 0.2 * x - 0.1 * y
}

#[test]
fn ingest_and_tile_normalize_a_sloped_plane() {
    let dir = tempfile::tempdir().unwrap();
    let xyz = dir.path().join("plane.xyz");
    let mut text = String::new();
    for i in 0..80 {
        for j in 0..80 {
            let (x, y) = (1000.0 + i as f64 * 0.5, 2000.0 + j as f64 * 0.5);
            text.push_str(&format!("{x} {y} {}\n", plane(x, y)));
        }
    }
    text.push_str(&format!("1020.25 2020.25 {}\n", plane(1020.25, 2020.25) + 5.0));
    text.push_str("not a point\n");
    std::fs::write(&xyz, text).unwrap();
    let (raw, tiled) = (dir.path().join("raw"), dir.path().join("tiles"));
    ok(&["ingest", "--input", p(&xyz), "--out", p(&raw)]);
    ok(&["tile", "--input", p(&raw), "--out", p(&tiled)]);

    let tiles = TileStore::new(&tiled).read_all().unwrap();
    let points: Vec<_> = tiles.iter().flat_map(|t| (0..t.len()).map(|i| t.cloud.get(i))).collect();
    assert_eq!(points.len(), 80 * 80 + 1);
    assert!(points.iter().any(|q| (q.hag - 5.0).abs() < 0.1));
    // Bilinear lookups in the outermost ground cell blend in the filled
    // cells past the data, so only the covered interior is checked.
    let inside = |q: &arbor_core::pointcloud::Point| (1002.0..=1037.5).contains(&q.x) && (2002.0..=2037.5).contains(&q.y);
    for q in points.iter().filter(|q| inside(q)) {
        assert!((q.hag as f64 - (q.z - plane(q.x, q.y))).abs() < 0.1, "{q:?}");
    }
}
