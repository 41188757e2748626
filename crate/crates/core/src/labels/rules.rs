use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::LabelMap;
use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::watershed::Cluster;

/// How the "intersects too far" test measures an overlap region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapTest {
    /// Largest horizontal distance between two points of the intersection.
    IntersectionDiameter,
    /// Largest horizontal distance from an intersection point to the nearest
    /// candidate point outside the intersection.
    PenetrationDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcceptRules {
    /// Apexes closer than this (3D, meters) are the same tip.
    pub apex_tolerance: f64,
    /// Maximum allowed overlap extent, meters.
    pub overlap_threshold: f64,
    pub overlap_test: OverlapTest,
    /// Intersection over cluster must stay strictly below this, for both
    /// clusters.
    pub ioc_max: f64,
}

impl Default for AcceptRules {
    fn default() -> Self {
        AcceptRules {
            apex_tolerance: 0.01,
            overlap_threshold: 2.0,
            overlap_test: OverlapTest::IntersectionDiameter,
            ioc_max: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum Rejection {
    Tip { instance: u32, distance: f64 },
    Overlap { instance: u32, extent: f64 },
    Ioc { instance: u32, candidate: f64, existing: f64 },
}

impl Rejection {
    pub fn instance(&self) -> u32 {
        match *self {
            Rejection::Tip { instance, .. } | Rejection::Overlap { instance, .. } | Rejection::Ioc { instance, .. } => {
                instance
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Rejection::Tip { .. } => "tip",
            Rejection::Overlap { .. } => "overlap",
            Rejection::Ioc { .. } => "ioc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Accept,
    Reject(Vec<Rejection>),
}

impl Decision {
    pub fn is_accept(&self) -> bool {
        matches!(self, Decision::Accept)
    }
}

/// Intersection over cluster for both operands: `(|a ∩ b| / |a|, |a ∩ b| / |b|)`.
pub fn ioc(candidate: &Cluster, other: &Cluster) -> Result<(f64, f64)> {
    if candidate.is_empty() || other.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let (a, b) = (&candidate.point_indices, &other.point_indices);
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok((inter as f64 / a.len() as f64, inter as f64 / b.len() as f64))
}

/// Largest pairwise XY distance of the given points (0 for fewer than two),
/// via the convex hull.
pub fn horizontal_diameter(cloud: &PointCloud, indices: &[u32]) -> f64 {
    let mut pts: Vec<(f64, f64)> = indices.iter().map(|&i| (cloud.x[i as usize], cloud.y[i as usize])).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    let hull = convex_hull(&pts);
    let mut best = 0.0f64;
    for (k, a) in hull.iter().enumerate() {
        for b in &hull[k + 1..] {
            best = best.max((a.0 - b.0).hypot(a.1 - b.1));
        }
    }
    best
}

/// Andrew's monotone chain over sorted, deduplicated points.
fn convex_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if pts.len() <= 2 {
        return pts.to_vec();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn penetration_depth(cloud: &PointCloud, inside: &[u32], outside: &[u32]) -> f64 {
    if inside.is_empty() {
        return 0.0;
    }
    if outside.is_empty() {
        return f64::INFINITY;
    }
    inside
        .iter()
        .map(|&i| {
            let (x, y) = (cloud.x[i as usize], cloud.y[i as usize]);
            outside
                .iter()
                .map(|&o| (cloud.x[o as usize] - x).hypot(cloud.y[o as usize] - y))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Apex of an instance: highest member by height above ground, lowest index
/// on ties.
pub(crate) fn apex_of(cloud: &PointCloud, members: &[u32]) -> u32 {
    let mut apex = members[0];
    for &i in &members[1..] {
        if cloud.hag[i as usize] > cloud.hag[apex as usize] {
            apex = i;
        }
    }
    apex
}

fn dist3(cloud: &PointCloud, a: u32, b: u32) -> f64 {
    let (a, b) = (a as usize, b as usize);
    let d = [cloud.x[a] - cloud.x[b], cloud.y[a] - cloud.y[b], cloud.z[a] - cloud.z[b]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Decide whether a Single-rated candidate becomes a new instance.
///
/// A candidate touching only Ground/Gray points is accepted outright.
/// Otherwise, for every instance it intersects, its tip must differ from the
/// instance tip, the overlap must not extend beyond the threshold, and the
/// intersection over cluster must stay below the bound for both clusters.
/// All failures are reported.
pub fn accept_candidate(candidate: &Cluster, labels: &LabelMap, cloud: &PointCloud, rules: &AcceptRules) -> Decision {
    let mut shared: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &i in &candidate.point_indices {
        let id = labels.instance_at(i as usize);
        if id != 0 {
            shared.entry(id).or_default().push(i);
        }
    }
    if shared.is_empty() {
        return Decision::Accept;
    }
    let ids: BTreeSet<u32> = shared.keys().copied().collect();
    let members = labels.members_of(&ids);
    let mut reasons = Vec::new();
    for (&id, inter) in &shared {
        let existing = &members[&id];
        let d = dist3(cloud, candidate.apex_index, apex_of(cloud, existing));
        if d <= rules.apex_tolerance {
            reasons.push(Rejection::Tip { instance: id, distance: d });
        }
        let extent = match rules.overlap_test {
            OverlapTest::IntersectionDiameter => horizontal_diameter(cloud, inter),
            OverlapTest::PenetrationDepth => {
                let outside: Vec<u32> = candidate
                    .point_indices
                    .iter()
                    .copied()
                    .filter(|&i| labels.instance_at(i as usize) != id)
                    .collect();
                penetration_depth(cloud, inter, &outside)
            }
        };
        if extent > rules.overlap_threshold {
            reasons.push(Rejection::Overlap { instance: id, extent });
        }
        let ioc_c = inter.len() as f64 / candidate.len() as f64;
        let ioc_e = inter.len() as f64 / existing.len() as f64;
        if !(ioc_c < rules.ioc_max && ioc_e < rules.ioc_max) {
            reasons.push(Rejection::Ioc {
                instance: id,
                candidate: ioc_c,
                existing: ioc_e,
            });
        }
    }
    if reasons.is_empty() {
        Decision::Accept
    } else {
        Decision::Reject(reasons)
    }
}
