//! Brute-force reference implementations shared by the integration tests.

#![allow(dead_code)]

use misd_core::scores::ConfidenceRecord;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Records with scores drawn from a small integer set so ties are common.
pub fn random_records(rng: &mut SplitMix64, n: usize, levels: u32) -> Vec<ConfidenceRecord> {
    (0..n)
        .map(|i| {
            let score = rng.random_range(0..levels) as f64 / levels as f64;
            let label = usize::from(rng.random_bool(0.3));
            ConfidenceRecord::new(i, score, 0, label)
        })
        .collect()
}

pub fn rng(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Pairwise count: P(correct score > wrong score) with ties worth one half.
pub fn auroc_pairwise(records: &[ConfidenceRecord]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for c in records.iter().filter(|r| r.correct) {
        for w in records.iter().filter(|r| !r.correct) {
            pairs += 1;
            if c.score > w.score {
                wins += 1.0;
            } else if c.score == w.score {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Tries every threshold `score < tau` for `tau` in the distinct scores and `+inf`,
/// keeping the smallest false-positive rate among those that catch enough errors.
pub fn fpr_exhaustive(records: &[ConfidenceRecord], target: f64) -> Option<f64> {
    let n_wrong = records.iter().filter(|r| !r.correct).count();
    let n_correct = records.len() - n_wrong;
    if n_wrong == 0 || n_correct == 0 {
        return None;
    }
    let mut taus: Vec<f64> = records.iter().map(|r| r.score).collect();
    taus.push(f64::INFINITY);
    taus.iter()
        .filter_map(|&tau| {
            let rej_wrong = records.iter().filter(|r| !r.correct && r.score < tau).count();
            let rej_correct = records.iter().filter(|r| r.correct && r.score < tau).count();
            (rej_wrong as f64 / n_wrong as f64 >= target).then_some(rej_correct as f64 / n_correct as f64)
        })
        .min_by(f64::total_cmp)
}

/// Mean selective risk, accepting records one at a time in the given order.
pub fn aurc_in_order(correct: &[bool]) -> f64 {
    let mut wrong = 0usize;
    let mut total = 0.0;
    for (k, &c) in correct.iter().enumerate() {
        wrong += usize::from(!c);
        total += wrong as f64 / (k + 1) as f64;
    }
    total / correct.len() as f64
}

/// Records whose ranking is exactly `correct` in order (descending scores).
pub fn records_in_order(correct: &[bool]) -> Vec<ConfidenceRecord> {
    let n = correct.len();
    correct
        .iter()
        .enumerate()
        .map(|(i, &c)| ConfidenceRecord::new(i, (n - i) as f64, 0, usize::from(!c)))
        .collect()
}
