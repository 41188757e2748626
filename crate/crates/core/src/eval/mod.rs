//! Rating accuracy, instance matching and counting reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rating::RatingClass;
use crate::util::{write_atomic, write_json_atomic};
use crate::watershed::ClusterSet;

/// Identifies the matching rule in every report.
pub const MATCHING_RULE: &str = "greedy-iou/v1";
pub const DETECTION_IOU: f64 = 0.5;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (RatingClass, RatingClass)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: RatingClass, predicted: RatingClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `(accuracy, weighted accuracy)`; the latter is the mean recall over
    /// classes that occur in the truth.
    pub fn accuracy_metrics(&self) -> Result<(f64, f64)> {
        let total = self.total();
        if total == 0 {
            return Err(Error::InvalidArgument("empty confusion matrix".into()));
        }
        let trace: u64 = (0..3).map(|i| self.counts[i][i]).sum();
        let recalls: Vec<f64> = (0..3)
            .filter_map(|i| {
                let row: u64 = self.counts[i].iter().sum();
                (row > 0).then(|| self.counts[i][i] as f64 / row as f64)
            })
            .collect();
        Ok((trace as f64 / total as f64, recalls.iter().sum::<f64>() / recalls.len() as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt: u32,
    pub pred: Option<u32>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub rule: String,
    pub tile: String,
    /// One entry per ground-truth instance, ascending gt id.
    pub pairs: Vec<MatchPair>,
    pub gt_count: usize,
    pub pred_count: usize,
    /// Ground-truth instances matched at IoU >= 0.5.
    pub detected: usize,
}

impl MatchReport {
    pub fn detection_rate(&self) -> f64 {
        if self.gt_count == 0 {
            0.0
        } else {
            self.detected as f64 / self.gt_count as f64
        }
    }

    pub fn mean_iou(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.pairs.iter().map(|p| p.iou).sum::<f64>() / self.pairs.len() as f64
        }
    }
}

/// Point-set IoU for every overlapping (gt, pred) pair.
pub fn pairwise_iou(gt: &ClusterSet, pred: &ClusterSet) -> BTreeMap<(u32, u32), f64> {
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    let n = gt.point_count().min(pred.point_count());
    for i in 0..n {
        let (g, p) = (gt.owner_of(i), pred.owner_of(i));
        if g != 0 && p != 0 {
            *inter.entry((g, p)).or_default() += 1;
        }
    }
    inter
        .into_iter()
        .map(|((g, p), k)| {
            let a = gt.get(g).map_or(0, |c| c.len());
            let b = pred.get(p).map_or(0, |c| c.len());
            ((g, p), k as f64 / (a + b - k) as f64)
        })
        .collect()
}

/// Greedy one-to-one matching in descending IoU order; ties go to the lower
/// gt id, then the lower predicted id. Unmatched gt instances get IoU 0.
pub fn match_instances(gt: &ClusterSet, pred: &ClusterSet) -> MatchReport {
    let mut cand: Vec<((u32, u32), f64)> = pairwise_iou(gt, pred).into_iter().collect();
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut gt_done: BTreeMap<u32, (u32, f64)> = BTreeMap::new();
    let mut pred_used = std::collections::BTreeSet::new();
    for ((g, p), iou) in cand {
        if gt_done.contains_key(&g) || pred_used.contains(&p) {
            continue;
        }
        gt_done.insert(g, (p, iou));
        pred_used.insert(p);
    }
    let pairs: Vec<MatchPair> = gt
        .ids()
        .into_iter()
        .map(|g| match gt_done.get(&g) {
            Some(&(p, iou)) => MatchPair { gt: g, pred: Some(p), iou },
            None => MatchPair { gt: g, pred: None, iou: 0.0 },
        })
        .collect();
    let detected = pairs.iter().filter(|p| p.iou >= DETECTION_IOU).count();
    MatchReport {
        rule: MATCHING_RULE.to_string(),
        tile: gt.tile.clone(),
        gt_count: gt.len(),
        pred_count: pred.len(),
        detected,
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub tile: String,
    pub category: String,
    pub gt: usize,
    /// Predicted clusters rated Single.
    pub predicted: usize,
    /// All predicted clusters before filtering.
    pub unfiltered: usize,
}

/// Predicted instance count (Single-rated only) against the truth count.
pub fn count_report(category: &str, pred: &ClusterSet, ratings: &BTreeMap<u32, RatingClass>, gt: &ClusterSet) -> CountRow {
    let predicted = pred
        .iter()
        .filter(|c| ratings.get(&c.id) == Some(&RatingClass::Single))
        .count();
    CountRow {
        tile: pred.tile.clone(),
        category: category.to_string(),
        gt: gt.len(),
        predicted,
        unfiltered: pred.len(),
    }
}

/// Sum rows per category, in first-seen order.
pub fn count_table(rows: &[CountRow]) -> Vec<CountRow> {
    let mut out: Vec<CountRow> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.category == r.category) {
            Some(o) => {
                o.gt += r.gt;
                o.predicted += r.predicted;
                o.unfiltered += r.unfiltered;
            }
            None => out.push(CountRow {
                tile: "*".into(),
                ..r.clone()
            }),
        }
    }
    out
}

pub fn write_match_csv(path: &Path, reports: &[MatchReport]) -> Result<()> {
    let mut s = format!("# matching: {MATCHING_RULE}\ntile,gt,pred,iou\n");
    for r in reports {
        for p in &r.pairs {
            let pred = p.pred.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{:.6}", r.tile, p.gt, pred, p.iou).unwrap();
        }
    }
    write_atomic(path, s.as_bytes())
}

pub fn write_count_csv(path: &Path, rows: &[CountRow]) -> Result<()> {
    let mut s = String::from("tile,category,gt,predicted,unfiltered\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.tile, r.category, r.gt, r.predicted, r.unfiltered).unwrap();
    }
    write_atomic(path, s.as_bytes())
}

/// Long-format trajectory table: one `(iteration, metric, value)` row per
/// metric and iteration.
pub fn write_trajectory_csv(path: &Path, rows: &[(usize, String, f64)]) -> Result<()> {
    let mut s = String::from("iteration,metric,value\n");
    for (it, m, v) in rows {
        writeln!(s, "{it},{m},{v}").unwrap();
    }
    write_atomic(path, s.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rule: String,
    pub gt_instances: usize,
    pub pred_instances: usize,
    pub detected: usize,
    pub detection_rate: f64,
    pub mean_iou: f64,
    pub counts: Vec<CountRow>,
    pub rating: Option<RatingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSummary {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub weighted_accuracy: f64,
}

impl EvalSummary {
    pub fn new(matches: &[MatchReport], counts: Vec<CountRow>, rating: Option<RatingSummary>) -> Self {
        let gt: usize = matches.iter().map(|m| m.gt_count).sum();
        let detected: usize = matches.iter().map(|m| m.detected).sum();
        let iou_sum: f64 = matches.iter().flat_map(|m| m.pairs.iter()).map(|p| p.iou).sum();
        EvalSummary {
            rule: MATCHING_RULE.to_string(),
            gt_instances: gt,
            pred_instances: matches.iter().map(|m| m.pred_count).sum(),
            detected,
            detection_rate: if gt == 0 { 0.0 } else { detected as f64 / gt as f64 },
            mean_iou: if gt == 0 { 0.0 } else { iou_sum / gt as f64 },
            counts,
            rating,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }
}
