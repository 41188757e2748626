//! Simulated human operator for synthetic scenes.

use std::collections::BTreeMap;

use arbor_core::rating::{sampling_order, RatingRecord};
use arbor_core::synth::TileTruth;
use arbor_core::watershed::ClusterSet;

/// Rate `sample` clusters (all when `None`), drawn in the seeded sampling
/// order, as a careful operator looking at the true crowns would.
/// Timestamps count up from 1 so the output is reproducible.
pub fn simulate_ratings(clusters: &[ClusterSet], truth: &[TileTruth], sample: Option<usize>, seed: u64) -> Vec<RatingRecord> {
    let by_tile: BTreeMap<&str, &TileTruth> = truth.iter().map(|t| (t.tile(), t)).collect();
    let mut home = BTreeMap::new();
    for set in clusters {
        for c in set.iter() {
            home.insert(c.id, (set, c));
        }
    }
    let ids: Vec<u32> = home.keys().copied().collect();
    let order = sampling_order(&ids, seed);
    let n = sample.unwrap_or(order.len()).min(order.len());
    order[..n]
        .iter()
        .enumerate()
        .filter_map(|(k, id)| {
            let (set, c) = home[id];
            let t = by_tile.get(set.tile.as_str())?;
            Some(RatingRecord::human(*id, t.rate(c), k as u64 + 1))
        })
        .collect()
}
