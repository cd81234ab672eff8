//! Confidence scores and the score registry.
//!
//! Every method maps `(model, x)` to a real number where higher means more
//! confident. Logit-based scores (MSR, ODIN, DOCTOR) and radius estimates go
//! through the same [`confidence`] entry point so the evaluation code never
//! special-cases either family.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::bench::CountingModel;
use crate::data::Dataset;
use crate::error::{MisdError, Result};
use crate::metrics;
use crate::model::Classifier;
use crate::radius::{self, BaseAttack, RadiusConfig, RadiusMethod};
use crate::tensor::{self, sign};

pub const TEMPERATURE_GRID: [f64; 15] = [
    0.2, 0.4, 0.6, 0.8, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 2.0, 2.5, 3.0, 100.0, 1000.0,
];

pub const EPSILON_GRID: [f64; 12] = [
    0.0, 5e-5, 1e-4, 1.5e-4, 2e-4, 2.5e-4, 3e-4, 3.5e-4, 4e-4, 6e-4, 8e-4, 1e-3,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Msr,
    Odin,
    Doctor,
    RrBs,
    RrFast,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 5] = [
        ScoreMethod::Msr,
        ScoreMethod::Odin,
        ScoreMethod::Doctor,
        ScoreMethod::RrBs,
        ScoreMethod::RrFast,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::Msr => "msr",
            ScoreMethod::Odin => "odin",
            ScoreMethod::Doctor => "doctor",
            ScoreMethod::RrBs => "rr_bs",
            ScoreMethod::RrFast => "rr_fast",
        }
    }

    pub fn is_radius(self) -> bool {
        matches!(self, ScoreMethod::RrBs | ScoreMethod::RrFast)
    }

    /// The (temperature, epsilon) grids this method is tuned over. A
    /// single-element grid means the parameter is fixed.
    pub fn tuning_grids(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ScoreMethod::Msr => (vec![1.0], EPSILON_GRID.to_vec()),
            ScoreMethod::Odin | ScoreMethod::Doctor => (TEMPERATURE_GRID.to_vec(), EPSILON_GRID.to_vec()),
            ScoreMethod::RrBs | ScoreMethod::RrFast => (TEMPERATURE_GRID.to_vec(), vec![0.0]),
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = MisdError;

    fn from_str(s: &str) -> Result<Self> {
        ScoreMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MisdError::config("method", format!("unknown score method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreConfig {
    pub method: ScoreMethod,
    pub temperature: f64,
    /// Input-preprocessing step size, ignored by radius methods.
    pub preprocess_eps: f64,
    pub radius: Option<RadiusConfig>,
}

impl ScoreConfig {
    pub fn new(method: ScoreMethod) -> Self {
        Self {
            method,
            temperature: 1.0,
            preprocess_eps: 0.0,
            radius: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_preprocess_eps(mut self, eps: f64) -> Self {
        self.preprocess_eps = eps;
        self
    }

    pub fn with_radius(mut self, radius: RadiusConfig) -> Self {
        self.radius = Some(radius);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(MisdError::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.preprocess_eps >= 0.0) {
            return Err(MisdError::Parameter(format!(
                "preprocess_eps must be non-negative, got {}",
                self.preprocess_eps
            )));
        }
        Ok(())
    }

    /// Radius settings with this config's temperature applied.
    pub fn radius_config(&self) -> RadiusConfig {
        RadiusConfig {
            temperature: self.temperature,
            ..self.radius.unwrap_or_default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceRecord {
    pub index: usize,
    pub score: f64,
    pub predicted: usize,
    pub label: usize,
    pub correct: bool,
}

impl ConfidenceRecord {
    pub fn new(index: usize, score: f64, predicted: usize, label: usize) -> Self {
        Self {
            index,
            score,
            predicted,
            label,
            correct: predicted == label,
        }
    }
}

pub fn msr_from_logits(z: &[f64], temperature: f64) -> Result<f64> {
    let p = tensor::softmax(z, temperature)?;
    Ok(p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

pub fn doctor_from_logits(z: &[f64], temperature: f64) -> Result<f64> {
    Ok(tensor::softmax(z, temperature)?.iter().map(|p| p * p).sum())
}

/// Maximum softmax probability at temperature `T`.
pub fn msr(model: &CountingModel<'_>, x: &[f64], temperature: f64) -> Result<f64> {
    msr_from_logits(&model.logits(x)?, temperature)
}

/// `Σ_k p_k²` with `p = softmax(f(x)/T)`.
pub fn doctor(model: &CountingModel<'_>, x: &[f64], temperature: f64) -> Result<f64> {
    doctor_from_logits(&model.logits(x)?, temperature)
}

/// One signed step of size `eps` that increases `log score(x)`.
/// `eps = 0` returns `x` without touching the model.
pub fn preprocess_input(
    model: &CountingModel<'_>,
    x: &[f64],
    method: ScoreMethod,
    temperature: f64,
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(MisdError::Parameter(format!("preprocess eps must be non-negative, got {eps}")));
    }
    if eps == 0.0 {
        return Ok(x.to_vec());
    }
    let grad = match method {
        // log MSR = log softmax(z/T)[ŷ] = -CE(z, ŷ, T)
        ScoreMethod::Msr | ScoreMethod::Odin => {
            let (_, g) = model.logits_and_input_gradient(x, None, temperature)?;
            g.into_iter().map(|v| -v).collect::<Vec<_>>()
        }
        ScoreMethod::Doctor => {
            let (_, g) = model.logits_and_objective_gradient(x, temperature, |g, logits, _| {
                let p = g.softmax(logits, temperature)?;
                let sq = g.mul(p, p)?;
                let s = g.sum(sq)?;
                g.log(s)
            })?;
            g
        }
        other => {
            return Err(MisdError::Parameter(format!("{other} has no input preprocessing")));
        }
    };
    Ok(x.iter().zip(&grad).map(|(xi, gi)| xi + eps * sign(*gi)).collect())
}

/// Confidence of `x` under `config`. Radius methods return the radius
/// itself, with `+∞` for inputs whose prediction never flips.
pub fn confidence(model: &CountingModel<'_>, x: &[f64], config: &ScoreConfig) -> Result<f64> {
    config.validate()?;
    let t = config.temperature;
    match config.method {
        ScoreMethod::Msr | ScoreMethod::Odin => {
            let xp = preprocess_input(model, x, config.method, t, config.preprocess_eps)?;
            msr(model, &xp, t)
        }
        ScoreMethod::Doctor => {
            let xp = preprocess_input(model, x, config.method, t, config.preprocess_eps)?;
            doctor(model, &xp, t)
        }
        ScoreMethod::RrBs => {
            let rc = config.radius_config();
            let method = match rc.base_attack {
                BaseAttack::Fgsm => RadiusMethod::RrBsFgsm,
                BaseAttack::Pgd { .. } => RadiusMethod::RrBsPgd,
            };
            Ok(radius::estimate(model, x, &rc, method)?.value)
        }
        ScoreMethod::RrFast => Ok(radius::rr_fast(model, x, &config.radius_config())?.value),
    }
}

/// Scores every example of `dataset` (in parallel, order preserved).
/// Record indices are positions within `dataset`.
pub fn build_records(model: &Classifier, dataset: &Dataset, config: &ScoreConfig) -> Result<Vec<ConfidenceRecord>> {
    config.validate()?;
    if model.input_dim() != dataset.dim() {
        return Err(MisdError::Dimension(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            dataset.dim()
        )));
    }
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let x = dataset.input(i);
            let score = confidence(&CountingModel::new(model), x, config)?;
            Ok(ConfidenceRecord::new(i, score, model.predict(x)?, dataset.label(i)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub temperature: f64,
    pub preprocess_eps: f64,
    pub aurc: f64,
    /// Every evaluated `(T, eps, aurc)`, in grid order.
    pub evaluations: Vec<(f64, f64, f64)>,
}

/// Exhaustive grid search minimizing AURC of `records_for(T, eps)`.
/// Ties go to the lower temperature, then the lower epsilon.
pub fn sweep_hyperparameters(
    mut records_for: impl FnMut(f64, f64) -> Result<Vec<ConfidenceRecord>>,
    temperatures: &[f64],
    epsilons: &[f64],
) -> Result<SweepResult> {
    if temperatures.is_empty() || epsilons.is_empty() {
        return Err(MisdError::Usage("hyperparameter grids must be non-empty".into()));
    }
    let mut ts = temperatures.to_vec();
    let mut es = epsilons.to_vec();
    ts.sort_by(f64::total_cmp);
    es.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut evaluations = Vec::with_capacity(ts.len() * es.len());
    for &t in &ts {
        for &e in &es {
            let records = records_for(t, e)?;
            if records.is_empty() {
                return Err(MisdError::Usage("validation set is empty".into()));
            }
            let a = metrics::aurc(&records)?;
            evaluations.push((t, e, a));
            if best.is_none_or(|(_, _, b)| a < b) {
                best = Some((t, e, a));
            }
        }
    }
    let (temperature, preprocess_eps, aurc) = best.expect("grids are non-empty");
    Ok(SweepResult {
        temperature,
        preprocess_eps,
        aurc,
        evaluations,
    })
}

/// Tunes `base` on `val` over the method's own grids.
pub fn tune(model: &Classifier, val: &Dataset, base: &ScoreConfig) -> Result<(ScoreConfig, SweepResult)> {
    if val.is_empty() {
        return Err(MisdError::Usage("validation set is empty".into()));
    }
    let (ts, es) = base.method.tuning_grids();
    let result = sweep_hyperparameters(
        |t, e| build_records(model, val, &base.with_temperature(t).with_preprocess_eps(e)),
        &ts,
        &es,
    )?;
    let tuned = base.with_temperature(result.temperature).with_preprocess_eps(result.preprocess_eps);
    Ok((tuned, result))
}

/// `index,method,score,predicted,label,correct`
pub fn score_csv(method: &str, records: &[ConfidenceRecord]) -> String {
    let mut out = String::from("index,method,score,predicted,label,correct\n");
    for r in records {
        out.push_str(&format!(
            "{},{method},{:?},{},{},{}\n",
            r.index, r.score, r.predicted, r.label, r.correct
        ));
    }
    out
}
