//! Rating classes, rating records and the append-only `ratings.jsonl` store.
//!
//! The file is never rewritten. Undo appends a tombstone line; replaying the
//! file from the top reconstructs the in-memory state exactly.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingClass {
    Single = 0,
    Multi = 1,
    NonTree = 2,
}

impl RatingClass {
    pub const ALL: [RatingClass; 3] = [RatingClass::Single, RatingClass::Multi, RatingClass::NonTree];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RatingClass::Single => "single",
            RatingClass::Multi => "multi",
            RatingClass::NonTree => "non_tree",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(RatingClass::Single),
            "multi" => Some(RatingClass::Multi),
            "non_tree" => Some(RatingClass::NonTree),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingSource {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub cluster_id: u32,
    pub class: RatingClass,
    pub source: RatingSource,
    /// Softmax maximum for model ratings, 1.0 for human ratings.
    pub confidence: f32,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl RatingRecord {
    pub fn human(cluster_id: u32, class: RatingClass, timestamp: u64) -> Self {
        RatingRecord {
            cluster_id,
            class,
            source: RatingSource::Human,
            confidence: 1.0,
            timestamp,
        }
    }

    pub fn model(cluster_id: u32, class: RatingClass, confidence: f32) -> Self {
        RatingRecord {
            cluster_id,
            class,
            source: RatingSource::Model,
            confidence: confidence.clamp(0.0, 1.0),
            timestamp: 0,
        }
    }
}

/// One line of `ratings.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RatingLine {
    Rating(RatingRecord),
    Undo { cluster_id: u32, timestamp: u64 },
}

/// Active ratings plus the undo stack.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingState {
    active: BTreeMap<(u32, RatingSource), RatingRecord>,
    // (cluster, record it replaced) per human rating, most recent last
    undo_stack: Vec<(u32, Option<RatingRecord>)>,
}

impl RatingState {
    pub fn apply(&mut self, line: &RatingLine) {
        match line {
            RatingLine::Rating(r) => {
                let prev = self.active.insert((r.cluster_id, r.source), r.clone());
                if r.source == RatingSource::Human {
                    self.undo_stack.push((r.cluster_id, prev));
                }
            }
            RatingLine::Undo { cluster_id, .. } => match self.undo_stack.last() {
                Some((id, _)) if id == cluster_id => {
                    let (id, prev) = self.undo_stack.pop().unwrap();
                    match prev {
                        Some(p) => {
                            self.active.insert((id, RatingSource::Human), p);
                        }
                        None => {
                            self.active.remove(&(id, RatingSource::Human));
                        }
                    }
                }
                _ => warn!("undo tombstone for cluster {cluster_id} does not match the last rating; ignored"),
            },
        }
    }

    pub fn get(&self, cluster_id: u32, source: RatingSource) -> Option<&RatingRecord> {
        self.active.get(&(cluster_id, source))
    }

    /// Human rating if present, otherwise the model rating.
    pub fn effective(&self, cluster_id: u32) -> Option<&RatingRecord> {
        self.get(cluster_id, RatingSource::Human)
            .or_else(|| self.get(cluster_id, RatingSource::Model))
    }

    pub fn human(&self) -> impl Iterator<Item = &RatingRecord> {
        self.active.values().filter(|r| r.source == RatingSource::Human)
    }

    pub fn human_count(&self) -> usize {
        self.human().count()
    }

    /// Cluster id that an undo would revert.
    pub fn last_undoable(&self) -> Option<u32> {
        self.undo_stack.last().map(|e| e.0)
    }

    pub fn records(&self) -> impl Iterator<Item = &RatingRecord> {
        self.active.values()
    }
}

/// File-backed rating log. Not thread-safe by itself; callers serialize
/// writes through one owner.
#[derive(Debug)]
pub struct RatingStore {
    path: PathBuf,
    state: RatingState,
    quarantined: usize,
}

impl RatingStore {
    /// Open (or create on first write) the log at `path`, replaying existing
    /// lines. Lines that fail to parse are copied to `<path>.quarantine`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut store = RatingStore {
            path,
            state: RatingState::default(),
            quarantined: 0,
        };
        if !store.path.exists() {
            return Ok(store);
        }
        let text = fs::read_to_string(&store.path).at(&store.path)?;
        let mut bad = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RatingLine>(line) {
                Ok(l) => store.state.apply(&l),
                Err(e) => {
                    warn!("{}:{}: corrupt rating line quarantined ({e})", store.path.display(), n + 1);
                    bad.push(line.to_string());
                }
            }
        }
        if !bad.is_empty() {
            store.quarantined = bad.len();
            let qpath = store.quarantine_path();
            let mut f = OpenOptions::new().create(true).append(true).open(&qpath).at(&qpath)?;
            for l in bad {
                writeln!(f, "{l}").at(&qpath)?;
            }
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn quarantine_path(&self) -> PathBuf {
        let mut s = self.path.clone().into_os_string();
        s.push(".quarantine");
        PathBuf::from(s)
    }

    pub fn quarantined(&self) -> usize {
        self.quarantined
    }

    pub fn state(&self) -> &RatingState {
        &self.state
    }

    pub fn append(&mut self, line: RatingLine) -> Result<()> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).at(parent)?;
            }
        }
        let mut json = serde_json::to_string(&line)?;
        json.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).at(&self.path)?;
        // one write call per line keeps lines whole under O_APPEND
        f.write_all(json.as_bytes()).at(&self.path)?;
        f.sync_data().at(&self.path)?;
        self.state.apply(&line);
        Ok(())
    }

    pub fn rate(&mut self, record: RatingRecord) -> Result<()> {
        self.append(RatingLine::Rating(record))
    }

    /// Revert the most recent human rating. Returns the affected cluster.
    pub fn undo(&mut self, timestamp: u64) -> Result<Option<u32>> {
        let Some(cluster_id) = self.state.last_undoable() else {
            return Ok(None);
        };
        self.append(RatingLine::Undo { cluster_id, timestamp })?;
        Ok(Some(cluster_id))
    }
}

/// Seeded uniform order over cluster ids, for drawing a representative
/// sample without replacement.
pub fn sampling_order(cluster_ids: &[u32], seed: u64) -> Vec<u32> {
    let mut ids = cluster_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
