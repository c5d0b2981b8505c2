//! Empirical false-positive-rate experiment: fill a filter with random
//! items, probe it with fresh non-members, and report the measured rate next
//! to the Eq.-1 prediction at each fill level.

use super::derive_rng;
use crate::bloom::{fpr_estimate, BloomFilter, BloomParams, FilterRole};
use rand::RngCore;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct FprPoint {
    pub inserted: u64,
    pub probes: u64,
    pub positives: u64,
    pub empirical: f64,
    pub predicted: f64,
}

/// Measure the false-positive rate at fill levels `0, n/4, n/2, 3n/4, n`.
/// Items and probes are independent 32-byte random strings (the digest size
/// the protocol inserts), so probes are non-members with overwhelming
/// probability.
pub fn fpr_experiment(params: BloomParams, n_max: u64, trials: u64, seed: u64) -> Vec<FprPoint> {
    let mut levels: Vec<u64> = (0..=4).map(|q| n_max * q / 4).collect();
    levels.dedup();

    let mut filter = BloomFilter::new(params, FilterRole::Daily);
    let mut insert_rng = derive_rng(seed, "fpr-insert", 0);
    let mut inserted = 0u64;
    let mut item = [0u8; 32];

    let mut points = Vec::with_capacity(levels.len());
    for level in levels {
        while inserted < level {
            insert_rng.fill_bytes(&mut item);
            filter.insert(&item);
            inserted += 1;
        }
        let mut probe_rng = derive_rng(seed, "fpr-probe", level);
        let mut positives = 0u64;
        for _ in 0..trials {
            probe_rng.fill_bytes(&mut item);
            if filter.contains(&item) {
                positives += 1;
            }
        }
        points.push(FprPoint {
            inserted: level,
            probes: trials,
            positives,
            empirical: positives as f64 / trials as f64,
            predicted: fpr_estimate(&params, level),
        });
    }
    points
}
