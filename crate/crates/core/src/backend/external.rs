use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::labels::{read_label_dir, LabelMap};
use crate::pointcloud::TileStore;
use crate::watershed::ClusterSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Predict,
}

/// One request to a segmentation backend. Directories hold the TileStore,
/// LabelMap and ClusterSet formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendJob {
    pub kind: JobKind,
    pub tiles: PathBuf,
    /// Training labels (train jobs only).
    pub labels: Option<PathBuf>,
    pub epochs: usize,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct JobOutcome {
    pub stdout: String,
    pub stderr: String,
    /// Cluster sets found in the output directory.
    pub clusters: Vec<ClusterSet>,
    /// Label maps found in the output directory.
    pub labels: Vec<LabelMap>,
}

impl BackendJob {
    pub fn validate(&self) -> Result<()> {
        if !TileStore::exists(&self.tiles) {
            return Err(Error::InvalidArgument(format!("no tile store at {}", self.tiles.display())));
        }
        if self.kind == JobKind::Train {
            match &self.labels {
                Some(l) if l.join("labels_manifest.json").is_file() => {}
                Some(l) => return Err(Error::InvalidArgument(format!("no labels at {}", l.display()))),
                None => return Err(Error::InvalidArgument("train job without labels".into())),
            }
            if self.epochs == 0 {
                return Err(Error::InvalidArgument("train job needs at least one epoch".into()));
            }
        }
        Ok(())
    }

    /// Substitute `{tiles} {labels} {out} {epochs} {seed}`; paths are
    /// single-quoted for the shell.
    pub fn render(&self, template: &str) -> String {
        let labels = self.labels.as_deref().map(shell_quote).unwrap_or_else(|| "''".into());
        template
            .replace("{tiles}", &shell_quote(&self.tiles))
            .replace("{labels}", &labels)
            .replace("{out}", &shell_quote(&self.out))
            .replace("{epochs}", &self.epochs.to_string())
            .replace("{seed}", &self.seed.to_string())
    }
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

fn tail(s: &str, n: usize) -> &str {
    let start = s.len().saturating_sub(n);
    let mut k = start;
    while !s.is_char_boundary(k) {
        k += 1;
    }
    &s[k..]
}

/// Run an external backend for `job` through `sh -c`, wait up to `timeout`
/// and validate what it left in the output directory.
///
/// Predict jobs must produce one cluster file per tile with matching point
/// counts. Train jobs may leave label maps or cluster files; whatever they
/// leave must parse.
pub fn invoke_external(job: &BackendJob, template: &str, timeout: Duration) -> Result<JobOutcome> {
    job.validate()?;
    if job.out.exists() {
        fs::remove_dir_all(&job.out).at(&job.out)?;
    }
    fs::create_dir_all(&job.out).at(&job.out)?;
    let logs = job.out.with_extension("logs");
    fs::create_dir_all(&logs).at(&logs)?;
    let (out_log, err_log) = (logs.join("stdout.log"), logs.join("stderr.log"));
    let line = job.render(template);
    info!("backend {:?} job: {line}", job.kind);
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&line)
        .stdin(Stdio::null())
        .stdout(File::create(&out_log).at(&out_log)?)
        .stderr(File::create(&err_log).at(&err_log)?)
        .spawn()
        .map_err(|e| Error::Backend(format!("cannot start `{line}`: {e}")))?;
    let started = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait().map_err(|e| Error::Backend(e.to_string()))? {
            break s;
        }
        if started.elapsed() > timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Backend(format!("timed out after {:.1} s", timeout.as_secs_f64())));
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let stdout = fs::read_to_string(&out_log).unwrap_or_default();
    let stderr = fs::read_to_string(&err_log).unwrap_or_default();
    debug!("backend finished with {status} after {:.2} s", started.elapsed().as_secs_f64());
    if !status.success() {
        return Err(Error::Backend(format!("process exited with {status}; stderr: {}", tail(&stderr, 2000).trim())));
    }
    let malformed = |e: Error| Error::Backend(format!("malformed output: {e}"));
    let mut outcome = JobOutcome {
        stdout,
        stderr,
        ..JobOutcome::default()
    };
    if job.out.join("labels_manifest.json").is_file() {
        outcome.labels = read_label_dir(&job.out).map_err(malformed)?.1;
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&job.out)
        .at(&job.out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && !p.ends_with("labels_manifest.json"))
        .collect();
    paths.sort();
    for p in paths {
        outcome.clusters.push(ClusterSet::read(&p).map_err(malformed)?);
    }
    if job.kind == JobKind::Predict {
        let manifest = TileStore::new(&job.tiles).manifest()?;
        for t in &manifest.tiles {
            let Some(set) = outcome.clusters.iter().find(|s| s.tile == t.name) else {
                return Err(Error::Backend(format!("malformed output: no clusters for tile {}", t.name)));
            };
            if set.point_count() as u64 != t.count {
                return Err(Error::Backend(format!(
                    "malformed output: tile {} has {} points, clusters cover {}",
                    t.name,
                    t.count,
                    set.point_count()
                )));
            }
        }
    }
    Ok(outcome)
}
