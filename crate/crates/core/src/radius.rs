//! Robust-radius estimation: how far (in L∞) an input can move along a
//! gradient-sign direction before the predicted class changes.
//!
//! Three estimators share the same direction `d = sign(∇_x CE(x, ŷ))`:
//!
//! * [`rr_bs`]: attack at a budget, doubling to find an upper bound, then
//!   bisection inside a fixed forward-pass budget.
//! * [`rr_fast`]: linearize every logit along `d` with one finite difference
//!   and solve for the first class crossing in closed form.
//! * [`oracle_line_search`]: dense grid scan, used to validate the other two.
//!
//! When no flip is found the estimate is the no-flip sentinel, `+∞`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::attack::{self, AttackConfig, Direction};
use crate::bench::{CountingModel, PassCounter};
use crate::data::Dataset;
use crate::error::{MisdError, Result};
use crate::model::Classifier;
use crate::tensor::{argmax, sign};

/// Denominators below this magnitude are treated as parallel trajectories.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Grid rows evaluated per batched forward call in the line search.
const SCAN_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMethod {
    RrBsFgsm,
    RrBsPgd,
    RrFast,
    OracleLineSearch,
}

impl RadiusMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RadiusMethod::RrBsFgsm => "rr_bs_fgsm",
            RadiusMethod::RrBsPgd => "rr_bs_pgd",
            RadiusMethod::RrFast => "rr_fast",
            RadiusMethod::OracleLineSearch => "oracle_line_search",
        }
    }
}

impl fmt::Display for RadiusMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RadiusMethod {
    type Err = MisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rr_bs" | "rr_bs_fgsm" => Ok(RadiusMethod::RrBsFgsm),
            "rr_bs_pgd" => Ok(RadiusMethod::RrBsPgd),
            "rr_fast" => Ok(RadiusMethod::RrFast),
            "oracle" | "oracle_line_search" => Ok(RadiusMethod::OracleLineSearch),
            other => Err(MisdError::Parameter(format!("unknown radius method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BaseAttack {
    Fgsm,
    Pgd { steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    /// Prediction at `lo` equals the clean prediction.
    pub unchanged_at_lo: bool,
    /// Prediction at `hi` differs from the clean prediction.
    pub changed_at_hi: bool,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusEstimate {
    /// L∞ radius, `+∞` for the no-flip sentinel.
    pub value: f64,
    pub method: RadiusMethod,
    pub bracket: Option<Bracket>,
    pub forward_passes: u64,
    pub backward_passes: u64,
}

impl RadiusEstimate {
    pub fn is_sentinel(&self) -> bool {
        self.value.is_infinite()
    }

    pub fn flipped(&self) -> bool {
        !self.is_sentinel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiusConfig {
    /// First budget tried by the doubling phase.
    pub r_init: f64,
    /// Forward-pass budget for [`rr_bs`], including the clean pass.
    pub max_total_passes: usize,
    /// Finite-difference step for [`rr_fast`].
    pub alpha: f64,
    pub temperature: f64,
    /// Give-up radius.
    pub r_cap: f64,
    pub base_attack: BaseAttack,
    /// When false the direction gradient uses raw logits (`T = 1`) regardless of `temperature`.
    pub temperature_in_gradient: bool,
    /// Grid size for the line-search oracle.
    pub oracle_grid_points: usize,
}

impl Default for RadiusConfig {
    fn default() -> Self {
        Self {
            r_init: 1e-4,
            max_total_passes: 25,
            alpha: 0.01,
            temperature: 1.0,
            r_cap: 2.0,
            base_attack: BaseAttack::Fgsm,
            temperature_in_gradient: true,
            oracle_grid_points: 10_000,
        }
    }
}

impl RadiusConfig {
    /// Defaults with `r_cap = 2 * range_width`.
    pub fn for_range_width(range_width: f64) -> Self {
        Self {
            r_cap: 2.0 * range_width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MisdError::Parameter(m));
        if !(self.r_init > 0.0) {
            return bad(format!("r_init must be positive, got {}", self.r_init));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.r_cap > self.r_init) {
            return bad(format!("r_cap {} must exceed r_init {}", self.r_cap, self.r_init));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_total_passes < 2 {
            return bad("max_total_passes must be at least 2".into());
        }
        if self.oracle_grid_points < 2 {
            return bad("oracle_grid_points must be at least 2".into());
        }
        if let BaseAttack::Pgd { steps } = self.base_attack {
            if steps == 0 {
                return bad("PGD base attack needs at least one step".into());
            }
        }
        Ok(())
    }

    pub fn gradient_temperature(&self) -> f64 {
        if self.temperature_in_gradient {
            self.temperature
        } else {
            1.0
        }
    }
}

fn sentinel(method: RadiusMethod, counter: &PassCounter, start: (u64, u64)) -> RadiusEstimate {
    RadiusEstimate {
        value: f64::INFINITY,
        method,
        bracket: None,
        forward_passes: counter.forwards() - start.0,
        backward_passes: counter.backwards() - start.1,
    }
}

fn along(x: &[f64], d: &[f64], r: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + r * di).collect()
}

/// Boundary search (attack at a budget + doubling + bisection).
///
/// With the FGSM base attack the gradient is taken once at `x`, each budget
/// costs one forward pass, and the total forward count never exceeds
/// `max_total_passes`: 1 clean pass + `L_upper` doubling passes +
/// `max_total_passes - L_upper - 1` bisection passes. With PGD the budget
/// limits attack evaluations instead.
pub fn rr_bs(model: &CountingModel<'_>, x: &[f64], config: &RadiusConfig) -> Result<RadiusEstimate> {
    config.validate()?;
    let counter = model.counter();
    let start = (counter.forwards(), counter.backwards());
    let t_grad = config.gradient_temperature();

    let (z0, grad) = model.logits_and_input_gradient(x, None, t_grad)?;
    let y_hat = argmax(&z0);
    let (method, direction) = match config.base_attack {
        BaseAttack::Fgsm => (RadiusMethod::RrBsFgsm, Some(grad.iter().map(|&g| sign(g)).collect::<Vec<_>>())),
        BaseAttack::Pgd { .. } => (RadiusMethod::RrBsPgd, None),
    };
    if let Some(d) = &direction {
        if d.iter().all(|&v| v == 0.0) {
            return Ok(sentinel(method, counter, start));
        }
    }

    let flips_at = |r: f64| -> Result<bool> {
        let adv = match (&direction, config.base_attack) {
            (Some(d), _) => along(x, d, r),
            (None, BaseAttack::Pgd { steps }) => {
                let cfg = AttackConfig::pgd(r, steps);
                attack::pgd(model, x, y_hat, &cfg, t_grad, Direction::Ascent)?
            }
            (None, BaseAttack::Fgsm) => unreachable!("FGSM always has a direction"),
        };
        Ok(model.predict(&adv)? != y_hat)
    };

    let eval_budget = config.max_total_passes - 1;
    let mut evals = 0usize;
    let mut lo = 0.0;
    let mut hi = config.r_init;
    loop {
        if hi > config.r_cap || evals >= eval_budget {
            return Ok(sentinel(method, counter, start));
        }
        evals += 1;
        if flips_at(hi)? {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }

    let l_upper = evals;
    let max_iter = config.max_total_passes - l_upper - 1;
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if flips_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    Ok(RadiusEstimate {
        value: 0.5 * (lo + hi),
        method,
        bracket: Some(Bracket {
            lo,
            hi,
            unchanged_at_lo: true,
            changed_at_hi: true,
        }),
        forward_passes: counter.forwards() - start.0,
        backward_passes: counter.backwards() - start.1,
    })
}

/// Linearized crossing estimate: one backward pass for the direction, one
/// extra forward pass at `x + alpha * d` for the finite-difference slopes.
pub fn rr_fast(model: &CountingModel<'_>, x: &[f64], config: &RadiusConfig) -> Result<RadiusEstimate> {
    config.validate()?;
    let counter = model.counter();
    let start = (counter.forwards(), counter.backwards());

    let (h0, grad) = model.logits_and_input_gradient(x, None, config.gradient_temperature())?;
    let y_hat = argmax(&h0);
    let d: Vec<f64> = grad.iter().map(|&g| sign(g)).collect();
    let h_alpha = model.logits(&along(x, &d, config.alpha))?;
    let slopes: Vec<f64> = h_alpha.iter().zip(&h0).map(|(a, b)| (a - b) / config.alpha).collect();

    let d_norm = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let value = match solve_crossing(&h0, &slopes, y_hat) {
        Some(t) if d_norm > 0.0 => t * d_norm,
        _ => f64::INFINITY,
    };
    Ok(RadiusEstimate {
        value,
        method: RadiusMethod::RrFast,
        bracket: None,
        forward_passes: counter.forwards() - start.0,
        backward_passes: counter.backwards() - start.1,
    })
}

/// First positive time at which an affine trajectory `h0[i] + t * slope[i]`
/// overtakes the predicted class, `None` when no class ever does.
///
/// `t_i = (h0[ŷ] - h0[i]) / (slope[i] - slope[ŷ])`, kept when the
/// denominator exceeds [`DENOMINATOR_FLOOR`] in magnitude and `t_i > 0`.
pub fn solve_crossing(h0: &[f64], slopes: &[f64], y_hat: usize) -> Option<f64> {
    assert_eq!(h0.len(), slopes.len(), "logit and slope vectors differ in length");
    let mut best = f64::INFINITY;
    for i in (0..h0.len()).filter(|&i| i != y_hat) {
        let denom = slopes[i] - slopes[y_hat];
        if denom.abs() <= DENOMINATOR_FLOOR {
            continue;
        }
        let t = (h0[y_hat] - h0[i]) / denom;
        if t > 0.0 && t < best {
            best = t;
        }
    }
    best.is_finite().then_some(best)
}

fn scan(
    model: &CountingModel<'_>,
    x: &[f64],
    direction: &[f64],
    y_hat: usize,
    lo: f64,
    hi: f64,
    grid_points: usize,
) -> Result<Option<(f64, f64)>> {
    let dim = x.len();
    let k = model.model().num_classes();
    let cells = (grid_points - 1) as f64;
    let radius = |j: usize| lo + (hi - lo) * j as f64 / cells;
    let mut j = 1;
    while j < grid_points {
        let end = (j + SCAN_CHUNK).min(grid_points);
        let rows = end - j;
        let mut batch = Vec::with_capacity(rows * dim);
        for jj in j..end {
            batch.extend(along(x, direction, radius(jj)));
        }
        let logits = model.logits_batch(&batch, rows)?;
        if let Some(off) = logits.chunks(k).position(|z| argmax(z) != y_hat) {
            let hit = j + off;
            return Ok(Some((radius(hit - 1), radius(hit))));
        }
        j = end;
    }
    Ok(None)
}

/// Grid scan of `grid_points` radii in `[0, r_cap]` along a fixed direction.
/// Returns the first radius whose prediction differs, bracketed to one cell.
pub fn oracle_line_search(
    model: &CountingModel<'_>,
    x: &[f64],
    direction: &[f64],
    r_cap: f64,
    grid_points: usize,
) -> Result<RadiusEstimate> {
    oracle_line_search_refined(model, x, direction, r_cap, grid_points, 0)
}

/// [`oracle_line_search`] followed by `refinements` further scans with the
/// same number of points inside the current bracket.
pub fn oracle_line_search_refined(
    model: &CountingModel<'_>,
    x: &[f64],
    direction: &[f64],
    r_cap: f64,
    grid_points: usize,
    refinements: usize,
) -> Result<RadiusEstimate> {
    if grid_points < 2 {
        return Err(MisdError::Parameter("grid_points must be at least 2".into()));
    }
    if direction.len() != x.len() {
        return Err(MisdError::Dimension("direction and input lengths differ".into()));
    }
    let counter = model.counter();
    let start = (counter.forwards(), counter.backwards());
    let y_hat = model.predict(x)?;
    let Some((mut lo, mut hi)) = scan(model, x, direction, y_hat, 0.0, r_cap, grid_points)? else {
        return Ok(sentinel(RadiusMethod::OracleLineSearch, counter, start));
    };
    for _ in 0..refinements {
        match scan(model, x, direction, y_hat, lo, hi, grid_points)? {
            Some((a, b)) => {
                lo = a;
                hi = b;
            }
            // Grid points are not strictly nested; keep the coarser bracket.
            None => break,
        }
    }
    Ok(RadiusEstimate {
        value: hi,
        method: RadiusMethod::OracleLineSearch,
        bracket: Some(Bracket {
            lo,
            hi,
            unchanged_at_lo: true,
            changed_at_hi: true,
        }),
        forward_passes: counter.forwards() - start.0,
        backward_passes: counter.backwards() - start.1,
    })
}

/// Single-example dispatch; the oracle scans along the FGSM direction.
pub fn estimate(
    model: &CountingModel<'_>,
    x: &[f64],
    config: &RadiusConfig,
    method: RadiusMethod,
) -> Result<RadiusEstimate> {
    match method {
        RadiusMethod::RrBsFgsm => rr_bs(model, x, &RadiusConfig { base_attack: BaseAttack::Fgsm, ..*config }),
        RadiusMethod::RrBsPgd => {
            let steps = match config.base_attack {
                BaseAttack::Pgd { steps } => steps,
                BaseAttack::Fgsm => 10,
            };
            rr_bs(model, x, &RadiusConfig { base_attack: BaseAttack::Pgd { steps }, ..*config })
        }
        RadiusMethod::RrFast => rr_fast(model, x, config),
        RadiusMethod::OracleLineSearch => {
            config.validate()?;
            let start = (model.counter().forwards(), model.counter().backwards());
            let d = attack::fgsm_direction(model, x, config.gradient_temperature())?;
            let mut est = oracle_line_search(model, x, &d, config.r_cap, config.oracle_grid_points)?;
            est.forward_passes = model.counter().forwards() - start.0;
            est.backward_passes = model.counter().backwards() - start.1;
            Ok(est)
        }
    }
}

/// Per-example estimates over a dataset, in dataset order, computed in parallel.
/// Returns the estimates and the merged pass counter.
pub fn radius_batch(
    model: &Classifier,
    dataset: &Dataset,
    config: &RadiusConfig,
    method: RadiusMethod,
) -> Result<(Vec<RadiusEstimate>, PassCounter)> {
    let estimates: Vec<RadiusEstimate> = (0..dataset.len())
        .into_par_iter()
        .map(|i| estimate(&CountingModel::new(model), dataset.input(i), config, method))
        .collect::<Result<_>>()?;
    let total = PassCounter::new();
    for e in &estimates {
        total.add_forwards(e.forward_passes);
        total.add_backwards(e.backward_passes);
    }
    Ok((estimates, total))
}

/// `index,method,radius,forward_passes,backward_passes,flipped`, with
/// `indices[i]` written as the index of `estimates[i]`.
pub fn radius_csv(indices: &[usize], estimates: &[RadiusEstimate]) -> String {
    let mut out = String::from("index,method,radius,forward_passes,backward_passes,flipped\n");
    for (i, e) in indices.iter().zip(estimates) {
        out.push_str(&format!(
            "{i},{},{:?},{},{},{}\n",
            e.method,
            e.value,
            e.forward_passes,
            e.backward_passes,
            e.flipped()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor;

    fn binary_linear(w: &[f64], b: f64) -> Classifier {
        let d = w.len();
        let mut weight = vec![0.0; d * 2];
        for (i, &wi) in w.iter().enumerate() {
            weight[i * 2] = wi;
        }
        Classifier::from_parameters(&[d, 2], vec![(weight, vec![b, 0.0])]).unwrap()
    }

    /// Bisection on the scalar crossing function, independent of the closed form.
    fn crossing_by_root_finding(h0: &[f64], hp: &[f64], y: usize) -> f64 {
        let gap = |t: f64| {
            let top = h0[y] + t * hp[y];
            (0..h0.len())
                .filter(|&i| i != y)
                .map(|i| top - (h0[i] + t * hp[i]))
                .fold(f64::INFINITY, f64::min)
        };
        let mut hi = 1e-3;
        while gap(hi) > 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn solve_crossing_examples() {
        let t = solve_crossing(&[2.0, 1.0], &[-1.0, 0.0], 0).unwrap();
        assert!((t - 1.0).abs() < 1e-15);
        assert!((crossing_by_root_finding(&[2.0, 1.0], &[-1.0, 0.0], 0) - 1.0).abs() < 1e-12);

        let t = solve_crossing(&[3.0, 1.0, 0.0], &[-2.0, 1.0, 0.0], 0).unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        let rf = crossing_by_root_finding(&[3.0, 1.0, 0.0], &[-2.0, 1.0, 0.0], 0);
        assert!((rf - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(solve_crossing(&[1.0, 0.0, -1.0], &[0.0, 0.0, 0.0], 0), None);
    }

    #[test]
    fn solve_crossing_parallel_slopes_is_sentinel() {
        assert_eq!(solve_crossing(&[2.0, 1.0, 0.5], &[0.7, 0.7, 0.7], 0), None);
        // Diverging trajectories never cross.
        assert_eq!(solve_crossing(&[2.0, 1.0], &[1.0, -1.0], 0), None);
    }

    #[test]
    fn solve_crossing_shift_and_scale_invariant() {
        let h0 = [1.5, 0.2, -0.3, 1.1];
        let hp = [-0.4, 0.9, 0.1, 0.3];
        let base = solve_crossing(&h0, &hp, 0).unwrap();
        let shifted: Vec<f64> = h0.iter().map(|v| v + 42.0).collect();
        assert!((solve_crossing(&shifted, &hp, 0).unwrap() - base).abs() < 1e-12);
        let scaled_h: Vec<f64> = h0.iter().map(|v| v * 3.0).collect();
        let scaled_p: Vec<f64> = hp.iter().map(|v| v * 3.0).collect();
        assert!((solve_crossing(&scaled_h, &scaled_p, 0).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn rr_bs_on_binary_linear_model() {
        let m = binary_linear(&[1.0, 1.0], 0.0);
        let probe = CountingModel::new(&m);
        let cfg = RadiusConfig::default();
        let est = rr_bs(&probe, &[1.0, 1.0], &cfg).unwrap();
        let b = est.bracket.unwrap();
        assert!(b.lo <= 1.0 && 1.0 <= b.hi, "{b:?}");
        assert!((est.value - 1.0).abs() <= b.width());
        assert!(est.forward_passes <= 25);
        assert_eq!(est.backward_passes, 1);
        assert_eq!(est.method, RadiusMethod::RrBsFgsm);
    }

    #[test]
    fn rr_bs_bracket_invariant_holds() {
        let m = Classifier::init(&[4, 12, 3], 21).unwrap();
        let probe = CountingModel::new(&m);
        let cfg = RadiusConfig::default();
        for k in 0..20 {
            let x: Vec<f64> = (0..4).map(|i| ((k * 5 + i * 3) % 13) as f64 / 13.0).collect();
            let est = rr_bs(&probe, &x, &cfg).unwrap();
            let Some(b) = est.bracket else { continue };
            let y = m.predict(&x).unwrap();
            let d = attack::fgsm_direction(&CountingModel::new(&m), &x, 1.0).unwrap();
            assert_eq!(m.predict(&along(&x, &d, b.lo)).unwrap(), y);
            assert_ne!(m.predict(&along(&x, &d, b.hi)).unwrap(), y);
            assert!(b.lo <= est.value && est.value <= b.hi);
            assert_eq!(est.forward_passes, 25);
        }
    }

    #[test]
    fn constant_classifier_gives_sentinel() {
        let m = Classifier::from_parameters(&[2, 2], vec![(vec![0.0; 4], vec![1.0, 0.0])]).unwrap();
        let probe = CountingModel::new(&m);
        let cfg = RadiusConfig::default();
        assert!(rr_bs(&probe, &[0.5, 0.5], &cfg).unwrap().is_sentinel());
        let f = rr_fast(&probe, &[0.5, 0.5], &cfg).unwrap();
        assert!(f.is_sentinel());
        assert_eq!((f.forward_passes, f.backward_passes), (2, 1));
    }

    #[test]
    fn parallel_slopes_model_gives_sentinel() {
        // Identical weight columns: all logits move in lockstep along any direction.
        let m = Classifier::from_parameters(&[2, 3], vec![(vec![1.0, 1.0, 1.0, -2.0, -2.0, -2.0], vec![1.0, 0.0, 0.5])]).unwrap();
        let probe = CountingModel::new(&m);
        assert!(rr_fast(&probe, &[0.3, 0.1], &RadiusConfig::default()).unwrap().is_sentinel());
    }

    #[test]
    fn rr_fast_exact_on_linear_model() {
        let m = binary_linear(&[1.0, 1.0], 0.0);
        let probe = CountingModel::new(&m);
        let est = rr_fast(&probe, &[1.0, 1.0], &RadiusConfig::default()).unwrap();
        assert!((est.value - 1.0).abs() <= 1e-9);
        assert_eq!((est.forward_passes, est.backward_passes), (2, 1));
    }

    #[test]
    fn oracle_brackets_analytic_radius() {
        let m = binary_linear(&[1.0, 2.0], -1.0);
        let probe = CountingModel::new(&m);
        let x = [1.0, 1.0];
        let d = attack::fgsm_direction(&probe, &x, 1.0).unwrap();
        let r_star = 2.0 / 3.0;
        let coarse = oracle_line_search(&probe, &x, &d, 2.0, 101).unwrap();
        let b = coarse.bracket.unwrap();
        assert!(b.lo <= r_star && r_star <= b.hi);
        assert!((b.width() - 0.02).abs() < 1e-12);
        let fine = oracle_line_search(&probe, &x, &d, 2.0, 1001).unwrap();
        let bf = fine.bracket.unwrap();
        assert!(bf.lo <= r_star && r_star <= bf.hi);
        assert!((b.width() / bf.width() - 10.0).abs() < 1e-9);

        assert!(oracle_line_search(&probe, &x, &d, 0.5, 101).unwrap().is_sentinel());
        let refined = oracle_line_search_refined(&probe, &x, &d, 2.0, 101, 2).unwrap();
        assert!((refined.value - r_star).abs() < 1e-5);
    }

    #[test]
    fn batch_matches_single_calls_and_permutes() {
        let m = Classifier::init(&[3, 8, 3], 2).unwrap();
        let ds = crate::data::make_gaussian_mixture(12, 3, 3, 2.0, 1).unwrap();
        let cfg = RadiusConfig::default();
        for method in [RadiusMethod::RrBsFgsm, RadiusMethod::RrFast] {
            let (batch, total) = radius_batch(&m, &ds, &cfg, method).unwrap();
            let mut fwd = 0;
            for i in 0..ds.len() {
                let single = estimate(&CountingModel::new(&m), ds.input(i), &cfg, method).unwrap();
                assert_eq!(batch[i], single);
                fwd += single.forward_passes;
            }
            assert_eq!(total.forwards(), fwd);

            let perm: Vec<usize> = (0..ds.len()).rev().collect();
            let (permuted, _) = radius_batch(&m, &ds.subset(&perm), &cfg, method).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                assert_eq!(permuted[j], batch[i]);
            }
            let (one, _) = radius_batch(&m, &ds.subset(&[4]), &cfg, method).unwrap();
            assert_eq!(one[0], batch[4]);
        }
    }

    #[test]
    fn csv_dump_format() {
        let est = vec![
            RadiusEstimate {
                value: 0.5,
                method: RadiusMethod::RrFast,
                bracket: None,
                forward_passes: 2,
                backward_passes: 1,
            },
            RadiusEstimate {
                value: f64::INFINITY,
                method: RadiusMethod::RrFast,
                bracket: None,
                forward_passes: 2,
                backward_passes: 1,
            },
        ];
        let csv = radius_csv(&[0, 1], &est);
        assert_eq!(
            csv,
            "index,method,radius,forward_passes,backward_passes,flipped\n0,rr_fast,0.5,2,1,true\n1,rr_fast,inf,2,1,false\n"
        );
    }

    #[test]
    fn config_validation() {
        let mut c = RadiusConfig::default();
        c.r_cap = 1e-5;
        assert!(c.validate().is_err());
        let mut c = RadiusConfig::default();
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        assert!(RadiusConfig::default().validate().is_ok());
        let _ = tensor::sign(0.0);
    }
}
