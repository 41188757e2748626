use std::path::Path;

use arbor_cli::server::{router, AppState, Catalog, ClusterView, Session};
use arbor_core::pointcloud::TileStore;
use arbor_core::rating::{RatingClass, RatingSource, RatingStore};
use arbor_core::synth::{generate_forest, write_scene, SceneSpec};
use arbor_core::watershed::{write_cluster_dir, WatershedParams};
use arbor_pipeline::segment_tiles;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn scene(dir: &Path) -> Vec<u32> {
    let spec = SceneSpec {
        trees: 12,
        extent: [40.0, 40.0],
        seed: 3,
        ..SceneSpec::default()
    };
    write_scene(&dir.join("scene"), &generate_forest(&spec).unwrap(), 100.0, "local").unwrap();
    let tiles = TileStore::new(dir.join("scene/tiles")).read_all().unwrap();
    let sets = segment_tiles(&tiles, &WatershedParams::default()).unwrap();
    write_cluster_dir(&dir.join("clusters"), &sets).unwrap();
    sets.iter().flat_map(|s| s.iter().map(|c| c.id)).collect()
}

fn app(dir: &Path) -> Router {
    let catalog = Catalog::load(&dir.join("scene/tiles"), &dir.join("clusters"), 1).unwrap();
    router(AppState::new(catalog, dir.join("run/ratings.jsonl")).unwrap(), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn lines(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("run/ratings.jsonl"))
        .unwrap_or_default()
        .lines()
        .map(str::to_string)
        .collect()
}

#[tokio::test]
async fn rate_undo_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let ids = scene(dir.path());
    assert!(ids.len() >= 8, "{} clusters", ids.len());
    let app = app(dir.path());

    let (s, v) = call(&app, "GET", "/api/session", None).await;
    assert_eq!(s, StatusCode::OK);
    let session: Session = serde_json::from_value(v).unwrap();
    assert_eq!((session.total, session.rated, session.remaining), (ids.len(), 0, ids.len()));

    let (s, v) = call(&app, "GET", "/api/clusters/next", None).await;
    assert_eq!(s, StatusCode::OK);
    let first = v["id"].as_u64().unwrap() as u32;
    assert!(ids.contains(&first));

    let (s, _) = call(&app, "POST", &format!("/api/clusters/{first}/rating"), Some(r#"{"class":"single"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(lines(dir.path()).len(), 1);
    let (_, v) = call(&app, "GET", "/api/session", None).await;
    assert_eq!(v["rated"], 1);
    let (_, v) = call(&app, "GET", "/api/clusters/next", None).await;
    assert_ne!(v["id"].as_u64().unwrap() as u32, first);

    let (s, v) = call(&app, "POST", "/api/ratings/undo", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["id"].as_u64().unwrap() as u32, first);
    assert_eq!(v["session"]["rated"], 0);
    let written = lines(dir.path());
    assert_eq!(written.len(), 2);
    assert!(written[1].contains("undo"), "{}", written[1]);
    let (s, _) = call(&app, "POST", "/api/ratings/undo", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn unknown_cluster_and_bad_class() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path());
    let app = app(dir.path());
    let (s, _) = call(&app, "POST", "/api/clusters/99999/rating", Some(r#"{"class":"single"}"#)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/api/clusters/99999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/api/clusters/1/rating", Some(r#"{"class":"tree"}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(lines(dir.path()).is_empty());
}

#[tokio::test]
async fn cluster_payload_matches_the_cluster() {
    let dir = tempfile::tempdir().unwrap();
    scene(dir.path());
    let app = app(dir.path());
    let (s, v) = call(&app, "GET", "/api/clusters/1", None).await;
    assert_eq!(s, StatusCode::OK);
    let view: ClusterView = serde_json::from_value(v).unwrap();
    let sets = arbor_core::watershed::read_cluster_dir(&dir.path().join("clusters")).unwrap();
    let c = sets.iter().find_map(|s| s.get(1)).unwrap();
    assert_eq!(view.points.x.len(), c.len());
    assert_eq!(view.points.hag.len(), c.len());
    assert_eq!(view.centroid, c.centroid);
    for k in 0..c.len() {
        assert!(view.bbox[0] <= view.points.x[k] && view.points.x[k] <= view.bbox[3]);
        assert!(view.bbox[2] <= view.points.hag[k] as f64 && view.points.hag[k] as f64 <= view.bbox[5]);
    }
}

#[tokio::test]
async fn all_rated_gives_no_content_and_restart_replays() {
    let dir = tempfile::tempdir().unwrap();
    let ids = scene(dir.path());
    let app1 = app(dir.path());
    for id in &ids {
        let (s, _) = call(&app1, "POST", &format!("/api/clusters/{id}/rating"), Some(r#"{"class":"multi"}"#)).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, v) = call(&app1, "GET", "/api/clusters/next", None).await;
    assert_eq!((s, v), (StatusCode::NO_CONTENT, Value::Null));
    drop(app1);

    // a torn trailing line is quarantined on restart, the rest replays
    let path = dir.path().join("run/ratings.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"rating\":{\"cluster_id\":");
    std::fs::write(&path, text).unwrap();
    let app2 = app(dir.path());
    let (_, v) = call(&app2, "GET", "/api/session", None).await;
    assert_eq!(v["rated"].as_u64().unwrap() as usize, ids.len());
    let store = RatingStore::open(&path).unwrap();
    assert!(ids.iter().all(|&id| store.state().get(id, RatingSource::Human).unwrap().class == RatingClass::Multi));
}
