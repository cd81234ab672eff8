//! Training loops: standard cross-entropy, adversarial training (AT), reverse
//! adversarial training (ReverseAT) and radius-aware training (RAT).
//!
//! The perturbed objectives all add a second cross-entropy term on a
//! single-step FGSM input `x'`:
//!
//! ```text
//! L = mean CE(x, y) + mean CE(x', y)
//! at:          x' = x + eps * sign(∇_x CE(x, y))
//! reverse_at:  x' = x - eps * sign(∇_x CE(x, y))
//! rat:         ascent where the current model is right, descent where it is wrong
//! ```
//!
//! `x'` is treated as data: gradients flow only into the parameters.
//! Optimization is SGD with heavy-ball momentum (`v = μv + g; p -= lr·v`),
//! a linear warmup and a per-epoch cosine decay.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand_distr::{Beta, Distribution};
use serde::Serialize;

use crate::attack::{self, AttackConfig, Direction};
use crate::bench::CountingModel;
use crate::data::Dataset;
use crate::error::{MisdError, Result};
use crate::model::Classifier;
use crate::rng::{self, stream};
use crate::tensor::{sign, Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Standard,
    At,
    ReverseAt,
    Rat,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Standard => "standard",
            Objective::At => "at",
            Objective::ReverseAt => "reverse_at",
            Objective::Rat => "rat",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = MisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Objective::Standard),
            "at" => Ok(Objective::At),
            "reverse_at" => Ok(Objective::ReverseAt),
            "rat" => Ok(Objective::Rat),
            other => Err(MisdError::config("train.objective", format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

impl FromStr for Schedule {
    type Err = MisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(MisdError::config("train.schedule", format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub momentum: f64,
    pub warmup_epochs: usize,
    pub schedule: Schedule,
    pub mixup_alpha: Option<f64>,
    /// Perturb the mixed inputs instead of the clean ones.
    pub mixup_on_rat: bool,
    /// 1 = FGSM; more steps switch the inner solve to PGD.
    pub inner_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Standard,
            epsilon: 0.001,
            epochs: 100,
            batch_size: 128,
            lr_init: 0.1,
            momentum: 0.9,
            warmup_epochs: 5,
            schedule: Schedule::Cosine,
            mixup_alpha: None,
            mixup_on_rat: false,
            inner_steps: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(MisdError::config(key, msg));
        if !(self.epsilon >= 0.0) {
            return bad("train.epsilon", format!("must be >= 0, got {}", self.epsilon));
        }
        if self.epochs == 0 {
            return bad("train.epochs", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("train.batch_size", "must be at least 1".into());
        }
        if !(self.lr_init > 0.0) {
            return bad("train.lr_init", format!("must be positive, got {}", self.lr_init));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("train.momentum", format!("must be in [0, 1), got {}", self.momentum));
        }
        if self.warmup_epochs >= self.epochs {
            return bad(
                "train.warmup_epochs",
                format!("{} must be below epochs {}", self.warmup_epochs, self.epochs),
            );
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0) {
                return bad("train.mixup_alpha", format!("must be positive, got {a}"));
            }
        }
        if self.inner_steps == 0 {
            return bad("train.inner_steps", "must be at least 1".into());
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.lr_init * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        match self.schedule {
            Schedule::Constant => self.lr_init,
            Schedule::Cosine => {
                let span = (self.epochs - self.warmup_epochs) as f64;
                let progress = (epoch - self.warmup_epochs) as f64 / span;
                0.5 * self.lr_init * (1.0 + (PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean mini-batch loss.
    pub loss: f64,
    /// Clean training accuracy after the epoch.
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub checksum: String,
}

impl TrainLog {
    /// `epoch,loss,acc,lr`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,acc,lr\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:?},{:?},{:?}\n", e.epoch, e.loss, e.accuracy, e.lr));
        }
        out
    }
}

/// The training-time perturbation of one example. `standard` and `eps = 0`
/// return `x` unchanged.
pub fn perturb_for_objective(
    model: &Classifier,
    x: &[f64],
    y: usize,
    objective: Objective,
    epsilon: f64,
    temperature: f64,
) -> Result<Vec<f64>> {
    let dir = match objective {
        Objective::Standard => return Ok(x.to_vec()),
        Objective::At => Direction::Ascent,
        Objective::ReverseAt => Direction::Descent,
        Objective::Rat => rat_direction(model.predict(x)?, y),
    };
    attack::fgsm_plain(model, x, y, epsilon, temperature, dir)
}

fn rat_direction(predicted: usize, label: usize) -> Direction {
    if predicted == label {
        Direction::Ascent
    } else {
        Direction::Descent
    }
}

/// Batched [`perturb_for_objective`] at `T = 1`: one gradient graph for the
/// whole batch, plus one forward pass for the RAT branch.
pub fn perturb_batch(
    model: &Classifier,
    xs: &[f64],
    labels: &[usize],
    objective: Objective,
    epsilon: f64,
    inner_steps: usize,
) -> Result<Vec<f64>> {
    let n = labels.len();
    let d = model.input_dim();
    let dirs: Vec<Direction> = match objective {
        Objective::Standard => return Ok(xs.to_vec()),
        Objective::At => vec![Direction::Ascent; n],
        Objective::ReverseAt => vec![Direction::Descent; n],
        Objective::Rat => model
            .predict_batch(xs, n)?
            .into_iter()
            .zip(labels)
            .map(|(p, &y)| rat_direction(p, y))
            .collect(),
    };
    if inner_steps > 1 {
        let probe = CountingModel::new(model);
        let cfg = AttackConfig::pgd(epsilon, inner_steps);
        let mut out = Vec::with_capacity(xs.len());
        for (i, dir) in dirs.into_iter().enumerate() {
            out.extend(attack::pgd(&probe, &xs[i * d..(i + 1) * d], labels[i], &cfg, 1.0, dir)?);
        }
        return Ok(out);
    }
    let grad = model.input_gradient_batch(xs, labels, 1.0)?;
    let mut out = Vec::with_capacity(xs.len());
    for (i, dir) in dirs.into_iter().enumerate() {
        let f = dir.factor();
        for j in i * d..(i + 1) * d {
            out.push(xs[j] + epsilon * f * sign(grad[j]));
        }
    }
    Ok(out)
}

/// Convex combination of a batch with a permutation of itself.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub inputs: Vec<f64>,
    pub labels_a: Vec<usize>,
    pub labels_b: Vec<usize>,
    pub lambda: f64,
}

/// Draws `λ ~ Beta(α, α)` and a partner permutation from `rng`.
pub fn mixup_batch(xs: &[f64], labels: &[usize], alpha: f64, rng: &mut impl RngCore) -> Result<MixedBatch> {
    let beta = Beta::new(alpha, alpha).map_err(|e| MisdError::Parameter(format!("mixup alpha {alpha}: {e}")))?;
    let lambda = beta.sample(rng);
    let perm = rng::permutation(labels.len(), rng);
    Ok(mix_with(xs, labels, &perm, lambda))
}

pub fn mix_with(xs: &[f64], labels: &[usize], partner: &[usize], lambda: f64) -> MixedBatch {
    let n = labels.len();
    let d = if n == 0 { 0 } else { xs.len() / n };
    let mut inputs = Vec::with_capacity(xs.len());
    for (i, &p) in partner.iter().enumerate() {
        for j in 0..d {
            inputs.push(lambda * xs[i * d + j] + (1.0 - lambda) * xs[p * d + j]);
        }
    }
    MixedBatch {
        inputs,
        labels_a: labels.to_vec(),
        labels_b: partner.iter().map(|&p| labels[p]).collect(),
        lambda,
    }
}

/// Per-layer `(weight, bias)` gradients.
pub type ParamGrads = Vec<(Vec<f64>, Vec<f64>)>;

/// `Σ_r w_r CE(x_r, y_r) / n` with its parameter gradient. Rows are data;
/// no input gradient is tracked.
pub fn weighted_ce(
    model: &Classifier,
    rows: &[f64],
    labels: &[usize],
    weights: &[f64],
    n: usize,
) -> Result<(f64, ParamGrads)> {
    let m = labels.len();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(m, model.input_dim(), rows.to_vec())?);
    let (logits, params) = model.forward_graph(&mut g, x, true)?;
    let ce = g.cross_entropy_rows(logits, labels, 1.0)?;
    let w = g.leaf(Tensor::vector(weights.to_vec())?);
    let weighted = g.mul(ce, w)?;
    let total = g.sum(weighted)?;
    let loss = g.scale(total, 1.0 / n as f64)?;
    g.backward(loss)?;
    let value = g.value(loss).item();
    let grads = params
        .weights
        .iter()
        .zip(&params.biases)
        .map(|(&wn, &bn)| (g.grad(wn).unwrap().to_vec(), g.grad(bn).unwrap().to_vec()))
        .collect();
    Ok((value, grads))
}

/// `mean CE(x, y) + mean CE(x', y)` with `x'` held fixed.
pub fn clean_plus_perturbed_loss(
    model: &Classifier,
    xs: &[f64],
    perturbed: &[f64],
    labels: &[usize],
) -> Result<(f64, ParamGrads)> {
    let n = labels.len();
    let rows = [xs, perturbed].concat();
    let all_labels = [labels, labels].concat();
    weighted_ce(model, &rows, &all_labels, &vec![1.0; 2 * n], n)
}

/// Combined clean + radius-aware loss on a batch.
pub fn rat_loss(model: &Classifier, xs: &[f64], labels: &[usize], epsilon: f64) -> Result<f64> {
    let perturbed = perturb_batch(model, xs, labels, Objective::Rat, epsilon, 1)?;
    Ok(clean_plus_perturbed_loss(model, xs, &perturbed, labels)?.0)
}

fn batch_objective(
    model: &Classifier,
    xs: &[f64],
    labels: &[usize],
    config: &TrainConfig,
    mix_rng: &mut impl RngCore,
) -> Result<(f64, ParamGrads)> {
    let n = labels.len();
    let perturbs = config.objective != Objective::Standard;
    let Some(alpha) = config.mixup_alpha else {
        if !perturbs {
            return weighted_ce(model, xs, labels, &vec![1.0; n], n);
        }
        let xp = perturb_batch(model, xs, labels, config.objective, config.epsilon, config.inner_steps)?;
        return clean_plus_perturbed_loss(model, xs, &xp, labels);
    };

    let mixed = mixup_batch(xs, labels, alpha, mix_rng)?;
    let mut rows = [mixed.inputs.as_slice(), &mixed.inputs].concat();
    let mut row_labels = [mixed.labels_a.as_slice(), &mixed.labels_b].concat();
    let mut weights = [vec![mixed.lambda; n], vec![1.0 - mixed.lambda; n]].concat();
    if perturbs {
        let (src, hard): (&[f64], Vec<usize>) = if config.mixup_on_rat {
            let dominant = if mixed.lambda >= 0.5 { &mixed.labels_a } else { &mixed.labels_b };
            (&mixed.inputs, dominant.clone())
        } else {
            (xs, labels.to_vec())
        };
        let xp = perturb_batch(model, src, &hard, config.objective, config.epsilon, config.inner_steps)?;
        rows.extend(xp);
        row_labels.extend(hard);
        weights.extend(vec![1.0; n]);
    }
    weighted_ce(model, &rows, &row_labels, &weights, n)
}

/// Clean accuracy of `model` on `dataset`.
pub fn accuracy(model: &Classifier, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(MisdError::Usage("accuracy of an empty dataset".into()));
    }
    let preds = model.predict_batch(dataset.inputs(), dataset.len())?;
    let hits = preds.iter().zip(dataset.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Trains `model` in place order-deterministically from `config.seed`.
pub fn train(mut model: Classifier, dataset: &Dataset, config: &TrainConfig) -> Result<(Classifier, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(MisdError::Usage("training set is empty".into()));
    }
    if dataset.dim() != model.input_dim() || dataset.num_classes() > model.num_classes() {
        return Err(MisdError::Dimension(format!(
            "model [{} -> {}] does not fit dataset [{} features, {} classes]",
            model.input_dim(),
            model.num_classes(),
            dataset.dim(),
            dataset.num_classes()
        )));
    }
    let d = dataset.dim();
    let mut shuffle = rng::stream_rng(config.seed, stream::SHUFFLE);
    let mut mix_rng = rng::stream_rng(config.seed, stream::MIXUP);
    let mut velocity: ParamGrads = model
        .layers()
        .iter()
        .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
        .collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let order = rng::permutation(dataset.len(), &mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len() * d);
            let mut ys = Vec::with_capacity(chunk.len());
            for &i in chunk {
                xs.extend_from_slice(dataset.input(i));
                ys.push(dataset.label(i));
            }
            let (loss, grads) = batch_objective(&model, &xs, &ys, config, &mut mix_rng)?;
            if !loss.is_finite() {
                return Err(MisdError::Training {
                    epoch,
                    step,
                    message: format!("loss is {loss}"),
                });
            }
            for ((layer, (gw, gb)), (vw, vb)) in model.layers_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                for ((p, g), v) in layer.weight.iter_mut().zip(gw).zip(vw.iter_mut()) {
                    *v = config.momentum * *v + g;
                    *p -= lr * *v;
                }
                for ((p, g), v) in layer.bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
                    *v = config.momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            if !model.is_finite() {
                return Err(MisdError::Training {
                    epoch,
                    step,
                    message: "parameters became non-finite".into(),
                });
            }
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: accuracy(&model, dataset)?,
            lr,
        });
    }
    let checksum = model.checksum();
    Ok((model, TrainLog { epochs: log, checksum }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gaussian_mixture;
    use crate::rng::stream_rng;
    use crate::tensor;

    fn small_config(objective: Objective) -> TrainConfig {
        TrainConfig {
            objective,
            epochs: 6,
            batch_size: 16,
            lr_init: 0.05,
            warmup_epochs: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let m = Classifier::init(&[3, 6, 3], 0).unwrap();
        let x = [0.2, 0.5, 0.7];
        for obj in [Objective::Standard, Objective::At, Objective::ReverseAt, Objective::Rat] {
            assert_eq!(perturb_for_objective(&m, &x, 1, obj, 0.0, 1.0).unwrap(), x.to_vec());
        }
    }

    #[test]
    fn rat_branches_match_at_and_reverse_at() {
        let m = Classifier::init(&[3, 6, 3], 4).unwrap();
        let x = [0.2, 0.5, 0.7];
        let y_hat = m.predict(&x).unwrap();
        let wrong = (y_hat + 1) % 3;
        let rat_c = perturb_for_objective(&m, &x, y_hat, Objective::Rat, 0.01, 1.0).unwrap();
        let at_c = perturb_for_objective(&m, &x, y_hat, Objective::At, 0.01, 1.0).unwrap();
        assert_eq!(rat_c, at_c);
        let rat_w = perturb_for_objective(&m, &x, wrong, Objective::Rat, 0.01, 1.0).unwrap();
        let rev_w = perturb_for_objective(&m, &x, wrong, Objective::ReverseAt, 0.01, 1.0).unwrap();
        assert_eq!(rat_w, rev_w);
    }

    #[test]
    fn batched_perturbation_matches_per_example() {
        let m = Classifier::init(&[3, 6, 3], 4).unwrap();
        let ds = make_gaussian_mixture(10, 3, 3, 1.0, 2).unwrap();
        for obj in [Objective::At, Objective::ReverseAt, Objective::Rat] {
            let batched = perturb_batch(&m, ds.inputs(), ds.labels(), obj, 0.01, 1).unwrap();
            for i in 0..ds.len() {
                let single = perturb_for_objective(&m, ds.input(i), ds.label(i), obj, 0.01, 1.0).unwrap();
                assert_eq!(&batched[i * 3..(i + 1) * 3], single.as_slice());
                let dist = single.iter().zip(ds.input(i)).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
                assert!(dist <= 0.01 + 1e-15);
            }
        }
    }

    #[test]
    fn affine_loss_moves_in_attack_direction() {
        let m = Classifier::from_parameters(&[2, 3], vec![(vec![1.0, -0.5, 0.3, 0.2, -0.7, 0.4], vec![0.1, 0.0, -0.2])]).unwrap();
        let x = [0.4, 0.6];
        let ce = |v: &[f64]| tensor::cross_entropy(&m.logits(v).unwrap(), 2, 1.0).unwrap();
        let up = perturb_for_objective(&m, &x, 2, Objective::At, 1e-3, 1.0).unwrap();
        let down = perturb_for_objective(&m, &x, 2, Objective::ReverseAt, 1e-3, 1.0).unwrap();
        assert!(ce(&up) > ce(&x));
        assert!(ce(&down) < ce(&x));
    }

    #[test]
    fn rat_loss_with_zero_epsilon_doubles_ce() {
        let m = Classifier::init(&[3, 6, 3], 1).unwrap();
        let ds = make_gaussian_mixture(20, 3, 3, 1.0, 2).unwrap();
        let (ce, _) = weighted_ce(&m, ds.inputs(), ds.labels(), &[1.0; 20], 20).unwrap();
        let rat = rat_loss(&m, ds.inputs(), ds.labels(), 0.0).unwrap();
        assert!((rat - 2.0 * ce).abs() < 1e-12);
        assert!(rat_loss(&m, ds.inputs(), ds.labels(), 0.01).unwrap() > 0.0);
    }

    #[test]
    fn rat_parameter_gradient_matches_finite_differences() {
        let m = Classifier::init(&[3, 5, 3], 7).unwrap();
        let ds = make_gaussian_mixture(8, 3, 3, 1.0, 2).unwrap();
        let xp = perturb_batch(&m, ds.inputs(), ds.labels(), Objective::Rat, 0.05, 1).unwrap();
        let (_, grads) = clean_plus_perturbed_loss(&m, ds.inputs(), &xp, ds.labels()).unwrap();
        let h = 1e-6;
        for li in 0..m.layers().len() {
            for wi in 0..m.layers()[li].weight.len() {
                let eval = |delta: f64| {
                    let mut mm = m.clone();
                    mm.layers_mut()[li].weight[wi] += delta;
                    clean_plus_perturbed_loss(&mm, ds.inputs(), &xp, ds.labels()).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads[li].0[wi];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "layer {li} w{wi}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_epsilon_gradients_are_parallel() {
        let m = Classifier::init(&[3, 5, 3], 7).unwrap();
        let ds = make_gaussian_mixture(16, 3, 3, 1.0, 2).unwrap();
        let (_, std) = weighted_ce(&m, ds.inputs(), ds.labels(), &[1.0; 16], 16).unwrap();
        for obj in [Objective::At, Objective::ReverseAt, Objective::Rat] {
            let xp = perturb_batch(&m, ds.inputs(), ds.labels(), obj, 0.0, 1).unwrap();
            let (_, g) = clean_plus_perturbed_loss(&m, ds.inputs(), &xp, ds.labels()).unwrap();
            let flat = |gs: &ParamGrads| gs.iter().flat_map(|(w, b)| w.iter().chain(b)).copied().collect::<Vec<_>>();
            let (a, b) = (flat(&std), flat(&g));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((dot / (na * nb) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_probe_fits_separable_data() {
        let ds = make_gaussian_mixture(200, 2, 2, 6.0, 5).unwrap();
        let m = Classifier::init(&[2, 2], 0).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 20,
            lr_init: 0.5,
            warmup_epochs: 2,
            ..TrainConfig::default()
        };
        let (m, log) = train(m, &ds, &cfg).unwrap();
        assert_eq!(accuracy(&m, &ds).unwrap(), 1.0);
        assert_eq!(log.epochs.len(), 40);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = make_gaussian_mixture(64, 4, 3, 2.0, 1).unwrap();
        for obj in [Objective::Standard, Objective::Rat] {
            let mut cfg = small_config(obj);
            cfg.mixup_alpha = Some(1.0);
            let run = || train(Classifier::init(&[4, 8, 3], 3).unwrap(), &ds, &cfg).unwrap();
            let (m1, l1) = run();
            let (m2, l2) = run();
            assert_eq!(l1, l2);
            assert_eq!(m1.checksum(), m2.checksum());
        }
    }

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig::default();
        assert!((cfg.lr_at(0) - 0.02).abs() < 1e-15);
        assert!((cfg.lr_at(4) - 0.1).abs() < 1e-15);
        assert!((cfg.lr_at(5) - 0.1).abs() < 1e-15);
        assert!(cfg.lr_at(99) < 0.01 * cfg.lr_init);
        let mut prev = f64::INFINITY;
        for e in 5..100 {
            assert!(cfg.lr_at(e) <= prev);
            prev = cfg.lr_at(e);
        }
    }

    #[test]
    fn log_follows_schedule() {
        let ds = make_gaussian_mixture(32, 4, 3, 2.0, 1).unwrap();
        let cfg = small_config(Objective::At);
        let (_, log) = train(Classifier::init(&[4, 8, 3], 3).unwrap(), &ds, &cfg).unwrap();
        for e in &log.epochs {
            assert_eq!(e.lr, cfg.lr_at(e.epoch));
        }
        assert!(log.to_csv().starts_with("epoch,loss,acc,lr\n0,"));
    }

    #[test]
    fn divergence_is_reported() {
        let ds = make_gaussian_mixture(32, 4, 3, 2.0, 1).unwrap();
        let cfg = TrainConfig {
            lr_init: 1e200,
            momentum: 0.0,
            ..small_config(Objective::Standard)
        };
        let err = train(Classifier::init(&[4, 8, 3], 3).unwrap(), &ds, &cfg).unwrap_err();
        assert!(matches!(err, MisdError::Training { epoch: 0, .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn mixup_contracts() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [0, 1, 2];
        let same = mix_with(&xs, &ys, &[2, 0, 1], 1.0);
        assert_eq!(same.inputs, xs.to_vec());
        let mixed = mixup_batch(&xs, &ys, 1.0, &mut stream_rng(1, stream::MIXUP)).unwrap();
        for i in 0..3 {
            let partner = ys.iter().position(|&y| y == mixed.labels_b[i]).unwrap();
            for j in 0..2 {
                let (a, b) = (xs[i * 2 + j], xs[partner * 2 + j]);
                let v = mixed.inputs[i * 2 + j];
                assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
            }
        }
    }

    #[test]
    fn beta_one_has_mean_half() {
        let mut rng = stream_rng(11, stream::MIXUP);
        let beta = Beta::new(1.0, 1.0).unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| beta.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn config_validation_names_keys() {
        let cfg = TrainConfig {
            warmup_epochs: 100,
            ..TrainConfig::default()
        };
        match cfg.validate().unwrap_err() {
            MisdError::Config { key, .. } => assert_eq!(key, "train.warmup_epochs"),
            e => panic!("{e}"),
        }
        assert!("bogus".parse::<Objective>().is_err());
    }
}
