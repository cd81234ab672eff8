//! Gradient-sign perturbations in the L∞ ball.
//!
//! `sign(0) = 0`, so coordinates with no gradient are left untouched.

use crate::bench::CountingModel;
use crate::error::{MisdError, Result};
use crate::model::Classifier;
use crate::tensor::sign;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Increase the cross-entropy of the target label.
    Ascent,
    /// Decrease it.
    Descent,
}

impl Direction {
    pub fn factor(self) -> f64 {
        match self {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    /// 1 is FGSM.
    pub steps: usize,
    pub step_size: f64,
    /// Box to clip every iterate into, `None` for unclamped arithmetic.
    pub clamp: Option<(f64, f64)>,
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: 1,
            step_size: epsilon,
            clamp: None,
        }
    }

    /// PGD with the default step size `epsilon / 4`.
    pub fn pgd(epsilon: f64, steps: usize) -> Self {
        Self {
            epsilon,
            steps,
            step_size: epsilon / 4.0,
            clamp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(MisdError::Parameter(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(MisdError::Parameter("attack needs at least one step".into()));
        }
        if self.steps > 1 && !(self.step_size > 0.0) {
            return Err(MisdError::Parameter(format!(
                "step_size must be positive for multi-step attacks, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Signed step `x + eps * dir * sign(grad)`, optionally clipped.
pub fn signed_step(x: &[f64], grad: &[f64], epsilon: f64, direction: Direction, clamp: Option<(f64, f64)>) -> Vec<f64> {
    let f = direction.factor();
    x.iter()
        .zip(grad)
        .map(|(&xi, &g)| {
            let v = xi + epsilon * f * sign(g);
            match clamp {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => v,
            }
        })
        .collect()
}

/// Single-step FGSM on `CE(x, target_label)` at temperature `T`.
pub fn fgsm(
    model: &CountingModel<'_>,
    x: &[f64],
    target_label: usize,
    epsilon: f64,
    temperature: f64,
    direction: Direction,
    clamp: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    if !(epsilon >= 0.0) {
        return Err(MisdError::Parameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let (_, grad) = model.logits_and_input_gradient(x, Some(target_label), temperature)?;
    Ok(signed_step(x, &grad, epsilon, direction, clamp))
}

/// Iterated signed steps, each projected back into the ε-ball around `x`.
/// No random start.
pub fn pgd(
    model: &CountingModel<'_>,
    x: &[f64],
    target_label: usize,
    config: &AttackConfig,
    temperature: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    config.validate()?;
    let eps = config.epsilon;
    let mut cur = x.to_vec();
    for _ in 0..config.steps {
        let (_, grad) = model.logits_and_input_gradient(&cur, Some(target_label), temperature)?;
        let stepped = signed_step(&cur, &grad, config.step_size, direction, None);
        cur = stepped
            .iter()
            .zip(x)
            .map(|(&v, &x0)| {
                let v = v.clamp(x0 - eps, x0 + eps);
                match config.clamp {
                    Some((lo, hi)) => v.clamp(lo, hi),
                    None => v,
                }
            })
            .collect();
    }
    Ok(cur)
}

/// `sign(∇_x CE(x, ŷ))` with `ŷ` the model's own prediction.
pub fn fgsm_direction(model: &CountingModel<'_>, x: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let (_, grad) = model.logits_and_input_gradient(x, None, temperature)?;
    Ok(grad.into_iter().map(sign).collect())
}

/// Uncounted convenience wrapper around [`fgsm`].
pub fn fgsm_plain(
    model: &Classifier,
    x: &[f64],
    target_label: usize,
    epsilon: f64,
    temperature: f64,
    direction: Direction,
) -> Result<Vec<f64>> {
    fgsm(&CountingModel::new(model), x, target_label, epsilon, temperature, direction, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor;

    /// Two-class linear model whose logit gap is `w . x + b`.
    fn binary_linear(w: &[f64], b: f64) -> Classifier {
        let d = w.len();
        let mut weight = vec![0.0; d * 2];
        for (i, &wi) in w.iter().enumerate() {
            weight[i * 2] = wi;
        }
        Classifier::from_parameters(&[d, 2], vec![(weight, vec![b, 0.0])]).unwrap()
    }

    fn linf(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let m = Classifier::init(&[3, 5, 3], 1).unwrap();
        let x = [0.1, 0.5, -0.2];
        let probe = CountingModel::new(&m);
        assert_eq!(fgsm(&probe, &x, 1, 0.0, 1.0, Direction::Ascent, None).unwrap(), x.to_vec());
    }

    #[test]
    fn linear_ascent_moves_against_weights() {
        let m = binary_linear(&[1.0, 1.0], 0.0);
        let x = [1.0, 1.0];
        let probe = CountingModel::new(&m);
        let y_hat = probe.predict(&x).unwrap();
        assert_eq!(y_hat, 0);
        let eps = 0.1;
        let adv = fgsm(&probe, &x, y_hat, eps, 1.0, Direction::Ascent, None).unwrap();
        assert_eq!(adv, vec![0.9, 0.9]);
        let gap = |v: &[f64]| {
            let z = m.logits(v).unwrap();
            z[0] - z[1]
        };
        assert!((gap(&x) - gap(&adv) - eps * 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_input() {
        let m = Classifier::from_parameters(&[2, 2], vec![(vec![1.0, 1.0, 1.0, 1.0], vec![0.0, 0.0])]).unwrap();
        let probe = CountingModel::new(&m);
        let adv = fgsm(&probe, &[0.3, 0.4], 0, 0.5, 1.0, Direction::Ascent, None).unwrap();
        assert_eq!(adv, vec![0.3, 0.4]);
    }

    #[test]
    fn pgd_single_step_equals_fgsm() {
        let m = Classifier::init(&[4, 8, 3], 3).unwrap();
        let x = [0.2, 0.4, 0.6, 0.8];
        let probe = CountingModel::new(&m);
        let eps = 0.03;
        let cfg = AttackConfig {
            epsilon: eps,
            steps: 1,
            step_size: eps,
            clamp: None,
        };
        let a = pgd(&probe, &x, 2, &cfg, 1.0, Direction::Ascent).unwrap();
        let b = fgsm(&probe, &x, 2, eps, 1.0, Direction::Ascent, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pgd_stays_in_ball() {
        let m = Classifier::init(&[5, 16, 4], 4).unwrap();
        let probe = CountingModel::new(&m);
        for trial in 0..100u64 {
            let x: Vec<f64> = (0..5).map(|i| ((trial * 7 + i) % 11) as f64 / 11.0).collect();
            let eps = 0.01 + (trial % 9) as f64 * 0.02;
            let cfg = AttackConfig::pgd(eps, 2 + (trial % 5) as usize);
            let adv = pgd(&probe, &x, (trial % 4) as usize, &cfg, 1.0, Direction::Ascent).unwrap();
            assert!(linf(&adv, &x) <= eps + 1e-12);
        }
    }

    #[test]
    fn pgd_flip_threshold_on_linear_model() {
        // gap = x0 + 2 x1 - 1 at x = (1, 1) is 2; ||w||_1 = 3 so the flip budget is 2/3.
        let m = binary_linear(&[1.0, 2.0], -1.0);
        let x = [1.0, 1.0];
        let probe = CountingModel::new(&m);
        let r_star = 2.0 / 3.0;
        for eps in [0.5, 0.6, 0.7, 0.9] {
            let cfg = AttackConfig::pgd(eps, 8);
            let p = pgd(&probe, &x, 0, &cfg, 1.0, Direction::Ascent).unwrap();
            let f = fgsm(&probe, &x, 0, eps, 1.0, Direction::Ascent, None).unwrap();
            let flipped_p = m.predict(&p).unwrap() != 0;
            let flipped_f = m.predict(&f).unwrap() != 0;
            assert_eq!(flipped_p, eps > r_star, "eps {eps}");
            assert_eq!(flipped_f, flipped_p);
        }
    }

    #[test]
    fn direction_codomain_and_linear_closed_form() {
        let m = Classifier::init(&[6, 10, 3], 8).unwrap();
        let probe = CountingModel::new(&m);
        let d = fgsm_direction(&probe, &[0.1, 0.9, 0.3, 0.4, 0.5, 0.2], 1.0).unwrap();
        assert!(d.iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));

        // linear softmax: grad = W (p - onehot(ŷ)) / T
        let w = vec![0.5, -1.0, 2.0, 0.3, -0.7, 0.1];
        let lin = Classifier::from_parameters(&[2, 3], vec![(w.clone(), vec![0.0, 0.2, -0.1])]).unwrap();
        let x = [0.6, -0.4];
        let z = lin.logits(&x).unwrap();
        let y = tensor::argmax(&z);
        let p = tensor::softmax(&z, 1.0).unwrap();
        let expected: Vec<f64> = (0..2)
            .map(|i| {
                let g: f64 = (0..3).map(|k| w[i * 3 + k] * (p[k] - if k == y { 1.0 } else { 0.0 })).sum();
                sign(g)
            })
            .collect();
        let probe = CountingModel::new(&lin);
        assert_eq!(fgsm_direction(&probe, &x, 1.0).unwrap(), expected);
    }

    #[test]
    fn binary_direction_is_temperature_invariant() {
        let m = binary_linear(&[0.7, -1.3, 0.2], 0.1);
        let probe = CountingModel::new(&m);
        let x = [0.3, 0.1, 0.8];
        let d1 = fgsm_direction(&probe, &x, 1.0).unwrap();
        for t in [0.5, 2.0] {
            assert_eq!(fgsm_direction(&probe, &x, t).unwrap(), d1);
        }
    }

    #[test]
    fn ascent_never_decreases_loss_on_affine_model() {
        let w = vec![0.5, -1.0, 2.0, 0.3, -0.7, 0.1, 1.1, 0.0, -0.4];
        let m = Classifier::from_parameters(&[3, 3], vec![(w, vec![0.0, 0.1, 0.2])]).unwrap();
        let probe = CountingModel::new(&m);
        for k in 0..30 {
            let x = [k as f64 * 0.03, 1.0 - k as f64 * 0.02, 0.5];
            let y = k % 3;
            let adv = fgsm(&probe, &x, y, 1e-4, 1.0, Direction::Ascent, None).unwrap();
            let l0 = tensor::cross_entropy(&m.logits(&x).unwrap(), y, 1.0).unwrap();
            let l1 = tensor::cross_entropy(&m.logits(&adv).unwrap(), y, 1.0).unwrap();
            assert!(l1 >= l0);
        }
    }

    #[test]
    fn clamping_keeps_box() {
        let m = binary_linear(&[1.0, -1.0], 0.0);
        let probe = CountingModel::new(&m);
        let adv = fgsm(&probe, &[0.01, 0.99], 0, 0.1, 1.0, Direction::Ascent, Some((0.0, 1.0))).unwrap();
        assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
