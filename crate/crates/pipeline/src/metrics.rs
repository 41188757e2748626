//! Per-iteration loop metrics and the stabilization rule.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use arbor_core::config::LoopConfig;
use arbor_core::rating::RatingClass;
use arbor_core::util::write_atomic;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "iteration,avg_trees_per_tile,n_single,n_multi,n_nontree,pct_single,pct_multi,pct_nontree,new_instances";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub avg_trees_per_tile: f64,
    /// Ratings of the clusters considered this iteration, indexed by class.
    pub counts: [usize; 3],
    pub new_instances: usize,
}

impl MetricsRow {
    pub fn new(iteration: usize, total_instances: usize, tiles: usize, counts: [usize; 3], new_instances: usize) -> Self {
        MetricsRow {
            iteration,
            avg_trees_per_tile: if tiles == 0 { 0.0 } else { total_instances as f64 / tiles as f64 },
            counts,
            new_instances,
        }
    }

    /// Class shares; all zero when nothing was rated.
    pub fn proportions(&self) -> [f64; 3] {
        let total: usize = self.counts.iter().sum();
        if total == 0 {
            return [0.0; 3];
        }
        self.counts.map(|c| c as f64 / total as f64)
    }

    pub fn proportion(&self, class: RatingClass) -> f64 {
        self.proportions()[class.index()]
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let p = r.proportions();
        let [a, b, c] = r.counts;
        writeln!(
            s,
            "{},{},{a},{b},{c},{},{},{},{}",
            r.iteration, r.avg_trees_per_tile, p[0], p[1], p[2], r.new_instances
        )
        .unwrap();
    }
    s
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    Ok(write_atomic(path, metrics_csv(rows).as_bytes())?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| arbor_core::Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::Inconsistent(format!("{}:{line}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(bad(n + 2, "expected 9 fields"));
            }
            let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(n + 2, "bad integer"));
            Ok(MetricsRow {
                iteration: int(0)?,
                avg_trees_per_tile: f[1].parse().map_err(|_| bad(n + 2, "bad number"))?,
                counts: [int(2)?, int(3)?, int(4)?],
                new_instances: int(8)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Few new instances for `stop_patience` consecutive iterations.
    Stabilized,
    MaxIterations,
}

/// Stop rule over the loop iterations completed so far (iteration 0, the
/// initial labels, excluded). Each entry is (new instances, confirmed
/// instances after that iteration).
pub fn stop_check(history: &[(usize, usize)], cfg: &LoopConfig) -> Option<StopReason> {
    let patience = cfg.stop_patience.max(1);
    if history.len() >= patience {
        let quiet = history[history.len() - patience..].iter().all(|&(new, total)| {
            let threshold = (cfg.stop_min_new as f64).max(cfg.stop_fraction * total as f64);
            (new as f64) < threshold
        });
        if quiet {
            return Some(StopReason::Stabilized);
        }
    }
    (history.len() >= cfg.max_iterations).then_some(StopReason::MaxIterations)
}
