//! Selective-classification metrics over confidence records.
//!
//! The positive class is "misclassified": a detector rejects an input when its
//! score falls below a threshold. Records are ranked by score, highest first;
//! equal scores keep index order so every metric is deterministic. `+∞`
//! (the radius no-flip sentinel) ranks above every finite score.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{MisdError, Result};
use crate::scores::ConfidenceRecord;

fn check(records: &[ConfidenceRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(MisdError::Usage("no records to evaluate".into()));
    }
    if let Some(r) = records.iter().find(|r| r.score.is_nan()) {
        return Err(MisdError::Numeric(format!("record {} has a NaN score", r.index)));
    }
    Ok(())
}

/// Positions of `records` ordered by descending score, ties by ascending index.
pub fn ranking(records: &[ConfidenceRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .score
            .partial_cmp(&records[a].score)
            .unwrap_or(Ordering::Equal)
            .then(records[a].index.cmp(&records[b].index))
    });
    order
}

/// `(coverage, risk)` at every coverage `k/n`, `k = 1..=n`.
pub fn risk_coverage(records: &[ConfidenceRecord]) -> Result<Vec<(f64, f64)>> {
    check(records)?;
    let n = records.len() as f64;
    let mut wrong = 0usize;
    Ok(ranking(records)
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            wrong += usize::from(!records[i].correct);
            let k = (k + 1) as f64;
            (k / n, wrong as f64 / k)
        })
        .collect())
}

/// Mean selective risk over the `n` coverage points.
pub fn aurc(records: &[ConfidenceRecord]) -> Result<f64> {
    let curve = risk_coverage(records)?;
    Ok(curve.iter().map(|&(_, r)| r).sum::<f64>() / curve.len() as f64)
}

/// Probability that a correct record outscores a wrong one, ties counting ½.
pub fn auroc(records: &[ConfidenceRecord]) -> Result<f64> {
    check(records)?;
    let n_correct = records.iter().filter(|r| r.correct).count();
    let n_wrong = records.len() - n_correct;
    if n_correct == 0 || n_wrong == 0 {
        return Err(MisdError::UndefinedMetric(format!(
            "auroc needs both classes ({n_correct} correct, {n_wrong} wrong)"
        )));
    }
    let mut sorted: Vec<&ConfidenceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(Ordering::Equal));
    // Sweep tie groups in ascending score order, counting wrong records strictly below.
    let mut wins = 0.0;
    let mut wrong_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            j += 1;
        }
        let group = &sorted[i..j];
        let c = group.iter().filter(|r| r.correct).count();
        let w = group.len() - c;
        wins += c as f64 * (wrong_below as f64 + 0.5 * w as f64);
        wrong_below += w;
        i = j;
    }
    Ok(wins / (n_correct as f64 * n_wrong as f64))
}

/// FPR (fraction of correct records rejected) at the least aggressive
/// threshold `τ` of the rule "reject if score < τ" whose TPR (fraction of
/// wrong records rejected) reaches `tpr_target`.
pub fn fpr_at_tpr(records: &[ConfidenceRecord], tpr_target: f64) -> Result<f64> {
    check(records)?;
    if !(0.0..=1.0).contains(&tpr_target) {
        return Err(MisdError::Parameter(format!("tpr target {tpr_target} outside [0, 1]")));
    }
    let n_correct = records.iter().filter(|r| r.correct).count();
    let n_wrong = records.len() - n_correct;
    if n_wrong == 0 {
        return Err(MisdError::UndefinedMetric("fpr95 needs at least one wrong record".into()));
    }
    if n_correct == 0 {
        return Err(MisdError::UndefinedMetric("fpr95 needs at least one correct record".into()));
    }
    let mut sorted: Vec<&ConfidenceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(Ordering::Equal));
    // Raising τ past each tie group rejects the whole group at once.
    let (mut rej_wrong, mut rej_correct) = (0usize, 0usize);
    let mut i = 0;
    loop {
        if rej_wrong as f64 / n_wrong as f64 >= tpr_target {
            return Ok(rej_correct as f64 / n_correct as f64);
        }
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].correct {
                rej_correct += 1;
            } else {
                rej_wrong += 1;
            }
            j += 1;
        }
        i = j;
    }
}

/// AUROC restricted to records whose predicted-class probability exceeds
/// `prob_threshold`. `probabilities[i]` belongs to `records[i]`.
pub fn auroc_above_confidence(records: &[ConfidenceRecord], probabilities: &[f64], prob_threshold: f64) -> Result<f64> {
    if records.len() != probabilities.len() {
        return Err(MisdError::Dimension(format!(
            "{} records but {} probabilities",
            records.len(),
            probabilities.len()
        )));
    }
    let kept: Vec<ConfidenceRecord> = records
        .iter()
        .zip(probabilities)
        .filter(|(_, &p)| p > prob_threshold)
        .map(|(r, _)| *r)
        .collect();
    if kept.is_empty() {
        return Err(MisdError::UndefinedMetric(format!("no records above probability {prob_threshold}")));
    }
    auroc(&kept)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub auroc: Option<f64>,
    pub aurc: f64,
    pub aurc_x1000: f64,
    pub fpr95: Option<f64>,
    pub accuracy: f64,
    pub n: usize,
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    #[serde(skip)]
    pub n_correct: usize,
    #[serde(skip)]
    pub n_wrong: usize,
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

/// All metrics for one method. Undefined AUROC/FPR95 become `None`.
pub fn detection_report(records: &[ConfidenceRecord], method: &str, dataset: &str, seed: u64) -> Result<DetectionReport> {
    let curve = risk_coverage(records)?;
    let a = curve.iter().map(|&(_, r)| r).sum::<f64>() / curve.len() as f64;
    let n_correct = records.iter().filter(|r| r.correct).count();
    let undefined_ok = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(MisdError::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(DetectionReport {
        auroc: undefined_ok(auroc(records))?,
        aurc: a,
        aurc_x1000: a * 1000.0,
        fpr95: undefined_ok(fpr_at_tpr(records, 0.95))?,
        accuracy: n_correct as f64 / records.len() as f64,
        n: records.len(),
        method: method.to_string(),
        dataset: dataset.to_string(),
        seed,
        n_correct,
        n_wrong: records.len() - n_correct,
        curve,
    })
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `coverage,risk`
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("coverage,risk\n");
        for (c, r) in &self.curve {
            out.push_str(&format!("{c:?},{r:?}\n"));
        }
        out
    }
}
