//! Rating service: serves cluster geometry to the rating UI and appends
//! human ratings to `ratings.jsonl`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use arbor_core::pointcloud::{Tile, TileStore};
use arbor_core::rating::{now_millis, sampling_order, RatingClass, RatingRecord, RatingSource, RatingStore};
use arbor_core::watershed::{read_cluster_dir, Cluster};
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub struct Catalog {
    tiles: Vec<Tile>,
    /// id -> (tile index, cluster)
    clusters: BTreeMap<u32, (usize, Cluster)>,
    order: Vec<u32>,
}

impl Catalog {
    pub fn load(tiles_dir: &Path, clusters_dir: &Path, seed: u64) -> Result<Self> {
        let tiles = TileStore::new(tiles_dir).read_all().with_context(|| format!("reading tiles in {}", tiles_dir.display()))?;
        let sets = read_cluster_dir(clusters_dir).with_context(|| format!("reading clusters in {}", clusters_dir.display()))?;
        let mut clusters = BTreeMap::new();
        for set in sets {
            let t = tiles
                .iter()
                .position(|t| t.name() == set.tile)
                .with_context(|| format!("clusters refer to tile {} which is not in {}", set.tile, tiles_dir.display()))?;
            for c in set.iter() {
                if clusters.insert(c.id, (t, c.clone())).is_some() {
                    anyhow::bail!("cluster id {} appears in more than one tile", c.id);
                }
            }
        }
        let ids: Vec<u32> = clusters.keys().copied().collect();
        Ok(Catalog {
            tiles,
            clusters,
            order: sampling_order(&ids, seed),
        })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

pub struct AppState {
    catalog: Catalog,
    // single writer
    store: Mutex<RatingStore>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(catalog: Catalog, ratings: impl Into<PathBuf>) -> Result<Shared> {
        let store = RatingStore::open(ratings)?;
        if store.quarantined() > 0 {
            warn!("{} unreadable rating lines moved to {}", store.quarantined(), store.quarantine_path().display());
        }
        Ok(Arc::new(AppState {
            catalog,
            store: Mutex::new(store),
        }))
    }

    fn session(&self) -> Session {
        let store = self.store.lock().expect("rating store lock");
        let rated = self
            .catalog
            .clusters
            .keys()
            .filter(|&&id| store.state().get(id, RatingSource::Human).is_some())
            .count();
        Session {
            total: self.catalog.len(),
            rated,
            remaining: self.catalog.len() - rated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub total: usize,
    pub rated: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPoints {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub hag: Vec<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rgb: Option<Vec<[u8; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub id: u32,
    pub points: ClusterPoints,
    pub centroid: [f64; 3],
    /// [min x, min y, min hag, max x, max y, max hag]
    pub bbox: [f64; 6],
}

#[derive(Debug, Deserialize)]
pub struct RatingBody {
    pub class: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn session(State(s): State<Shared>) -> Json<Session> {
    Json(s.session())
}

async fn next(State(s): State<Shared>) -> Response {
    let store = s.store.lock().expect("rating store lock");
    match s.catalog.order.iter().find(|&&id| store.state().get(id, RatingSource::Human).is_none()) {
        Some(id) => Json(json!({ "id": id })).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn cluster(State(s): State<Shared>, UrlPath(id): UrlPath<u32>) -> Response {
    let Some((t, c)) = s.catalog.clusters.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("no cluster {id}"));
    };
    let cloud = &s.catalog.tiles[*t].cloud;
    let idx: Vec<usize> = c.point_indices.iter().map(|&i| i as usize).collect();
    let x: Vec<f64> = idx.iter().map(|&i| cloud.x[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| cloud.y[i]).collect();
    let hag: Vec<f32> = idx.iter().map(|&i| cloud.hag[i]).collect();
    let fold = |v: &mut [f64; 6], p: [f64; 3]| {
        for k in 0..3 {
            v[k] = v[k].min(p[k]);
            v[k + 3] = v[k + 3].max(p[k]);
        }
    };
    let mut bbox = [f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for k in 0..idx.len() {
        fold(&mut bbox, [x[k], y[k], hag[k] as f64]);
    }
    let rgb = cloud.rgb.as_ref().map(|rgb| idx.iter().map(|&i| rgb[i]).collect());
    Json(ClusterView {
        id,
        points: ClusterPoints { x, y, hag, rgb },
        centroid: c.centroid,
        bbox,
    })
    .into_response()
}

async fn rate(State(s): State<Shared>, UrlPath(id): UrlPath<u32>, Json(body): Json<RatingBody>) -> Response {
    if !s.catalog.clusters.contains_key(&id) {
        return error(StatusCode::NOT_FOUND, format!("no cluster {id}"));
    }
    let Some(class) = RatingClass::parse(&body.class) else {
        return error(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown class {:?}; expected single, multi or non_tree", body.class));
    };
    let result = s.store.lock().expect("rating store lock").rate(RatingRecord::human(id, class, now_millis()));
    if let Err(e) = result {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    info!("cluster {id} rated {}", class.as_str());
    Json(s.session()).into_response()
}

async fn undo(State(s): State<Shared>) -> Response {
    let result = s.store.lock().expect("rating store lock").undo(now_millis());
    match result {
        Ok(Some(id)) => {
            info!("rating of cluster {id} undone");
            Json(json!({ "id": id, "session": s.session() })).into_response()
        }
        Ok(None) => error(StatusCode::CONFLICT, "nothing to undo"),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/session", get(session))
        .route("/api/clusters/next", get(next))
        .route("/api/clusters/{id}", get(cluster))
        .route("/api/clusters/{id}/rating", post(rate))
        .route("/api/ratings/undo", post(undo))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: Shared, port: u16, static_dir: Option<&Path>) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .with_context(|| format!("cannot listen on port {port}"))?;
    info!("rating service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
