//! Run directory layout, exclusive lock and write-then-swap iteration
//! directories.
//!
//! ```text
//! <run>/config.json   resolved configuration snapshot
//! <run>/inputs.json   tile store, initial clusters, optional rater
//! <run>/ratings.jsonl human ratings
//! <run>/metrics.csv   copy of the latest iteration's metrics
//! <run>/iter_<k>/{labels/, clusters/, params/, metrics.csv, state.json}
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use arbor_core::config::Config;
use arbor_core::error::IoContext;
use arbor_core::util::{read_json, write_json_atomic};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOCK: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInputs {
    pub tiles: PathBuf,
    /// Initial (watershed) cluster directory.
    pub clusters: PathBuf,
    /// Pretrained rater parameters; trained from the human ratings if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rater: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn inputs_path(&self) -> PathBuf {
        self.root.join("inputs.json")
    }
    pub fn ratings_path(&self) -> PathBuf {
        self.root.join("ratings.jsonl")
    }
    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn iter_dir(&self, k: usize) -> PathBuf {
        self.root.join(format!("iter_{k}"))
    }
    pub fn work_dir(&self) -> PathBuf {
        self.root.join("work")
    }

    /// Store inputs and config, or check them against an existing snapshot.
    pub fn prepare(&self, inputs: &RunInputs, cfg: &Config) -> Result<()> {
        fs::create_dir_all(&self.root).at(&self.root)?;
        for (path, value) in [
            (self.config_path(), serde_json::to_value(cfg).map_err(arbor_core::Error::from)?),
            (self.inputs_path(), serde_json::to_value(inputs).map_err(arbor_core::Error::from)?),
        ] {
            if path.is_file() {
                let stored: serde_json::Value = read_json(&path)?;
                if stored != value {
                    return Err(Error::Inconsistent(format!(
                        "{} differs from the requested settings; use a new run directory",
                        path.display()
                    )));
                }
            } else {
                write_json_atomic(&path, &value)?;
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> Result<RunInputs> {
        Ok(read_json(&self.inputs_path())?)
    }

    pub fn config(&self) -> Result<Config> {
        Ok(Config::load(&self.config_path())?)
    }

    /// Highest iteration with a complete directory.
    pub fn latest_iteration(&self) -> Result<Option<usize>> {
        if !self.root.is_dir() {
            return Ok(None);
        }
        let mut best = None;
        for entry in fs::read_dir(&self.root).at(&self.root)? {
            let entry = entry.at(&self.root)?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(k) = name.strip_prefix("iter_").and_then(|s| s.parse::<usize>().ok()) {
                if entry.path().join("state.json").is_file() {
                    best = best.max(Some(k));
                }
            }
        }
        Ok(best)
    }

    /// Remove staging directories left by an interrupted iteration.
    pub fn clean_staging(&self) -> Result<()> {
        if !self.root.is_dir() {
            return Ok(());
        }
        for entry in fs::read_dir(&self.root).at(&self.root)? {
            let path = entry.at(&self.root)?.path();
            if path.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".staging")) {
                warn!("removing partial iteration {}", path.display());
                fs::remove_dir_all(&path).at(&path)?;
            }
        }
        Ok(())
    }

    /// Empty staging directory for iteration `k`.
    pub fn stage(&self, k: usize) -> Result<PathBuf> {
        let dir = self.root.join(format!("iter_{k}.staging"));
        if dir.exists() {
            fs::remove_dir_all(&dir).at(&dir)?;
        }
        fs::create_dir_all(&dir).at(&dir)?;
        Ok(dir)
    }

    /// Publish a staged iteration with one rename.
    pub fn commit(&self, k: usize, staged: &Path) -> Result<PathBuf> {
        let dest = self.iter_dir(k);
        if dest.exists() {
            fs::remove_dir_all(&dest).at(&dest)?;
        }
        fs::rename(staged, &dest).at(&dest)?;
        Ok(dest)
    }

    pub fn lock(&self) -> Result<RunLock> {
        fs::create_dir_all(&self.root).at(&self.root)?;
        let path = self.root.join(LOCK);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).at(&path)?;
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let pid: u32 = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(0);
                    if pid != 0 && Path::new(&format!("/proc/{pid}")).exists() {
                        return Err(Error::Locked { path: self.root.clone(), pid });
                    }
                    warn!("removing stale lock of process {pid} in {}", self.root.display());
                    fs::remove_file(&path).at(&path)?;
                }
                Err(e) => return Err(arbor_core::Error::io(&path, e).into()),
            }
        }
        Err(Error::Locked {
            path: self.root.clone(),
            pid: 0,
        })
    }
}

/// Held for the duration of a loop run; removes the lock file on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path().join("r"));
        let l = run.lock().unwrap();
        assert!(matches!(run.lock(), Err(Error::Locked { .. })));
        drop(l);
        run.lock().unwrap();
    }

    #[test]
    fn stale_lock_is_taken_over() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        fs::write(dir.path().join(LOCK), "4000000000").unwrap();
        run.lock().unwrap();
    }

    #[test]
    fn staging_is_invisible_until_commit() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let s = run.stage(2).unwrap();
        fs::write(s.join("state.json"), "{}").unwrap();
        assert_eq!(run.latest_iteration().unwrap(), None);
        run.commit(2, &s).unwrap();
        assert_eq!(run.latest_iteration().unwrap(), Some(2));
        run.stage(3).unwrap();
        run.clean_staging().unwrap();
        assert!(!dir.path().join("iter_3.staging").exists());
    }

    #[test]
    fn snapshot_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let inputs = RunInputs {
            tiles: "t".into(),
            clusters: "c".into(),
            rater: None,
        };
        let cfg = Config::default();
        run.prepare(&inputs, &cfg).unwrap();
        run.prepare(&inputs, &cfg).unwrap();
        let mut other = cfg.clone();
        other.run.max_iterations = 3;
        assert!(matches!(run.prepare(&inputs, &other), Err(Error::Inconsistent(_))));
    }
}
