//! Parametric calibrators fitted by likelihood maximization: Platt
//! scaling, beta calibration, and temperature scaling.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::{clip_unit, logit, sigmoid};

pub(crate) const MAX_NEWTON_ITERS: usize = 100;
const GRAD_TOL: f64 = 1e-9;

fn check_two_classes(labels: &[u8]) -> Result<()> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid_input(
            "calibrator fit requires both classes present",
        ));
    }
    Ok(())
}

/// Newton minimization of the Bernoulli negative log-likelihood for a
/// logistic model `p_i = sigmoid(theta . x_i)` against (possibly
/// smoothed) targets. Coordinates with a lower bound are projected
/// after each step; at an active bound the outward gradient component
/// counts as satisfied.
fn logistic_mle(
    features: &[Vec<f64>],
    targets: &[f64],
    theta0: Vec<f64>,
    lower_bounds: &[Option<f64>],
) -> Result<Vec<f64>> {
    let dim = theta0.len();
    let project = |theta: &mut [f64]| {
        for (t, bound) in theta.iter_mut().zip(lower_bounds) {
            if let Some(lo) = bound {
                *t = t.max(*lo);
            }
        }
    };
    let nll = |theta: &[f64]| -> f64 {
        features
            .iter()
            .zip(targets)
            .map(|(x, &t)| {
                let z: f64 = x.iter().zip(theta).map(|(xi, ti)| xi * ti).sum();
                let p = clip_unit(sigmoid(z));
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum()
    };

    let mut theta = theta0;
    project(&mut theta);
    let mut current = nll(&theta);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..MAX_NEWTON_ITERS {
        let mut grad = alloc::vec![0.0; dim];
        let mut hess = alloc::vec![0.0; dim * dim];
        for (x, &t) in features.iter().zip(targets) {
            let z: f64 = x.iter().zip(&theta).map(|(xi, ti)| xi * ti).sum();
            let p = sigmoid(z);
            let w = p * (1.0 - p);
            for i in 0..dim {
                grad[i] += (p - t) * x[i];
                for j in 0..dim {
                    hess[i * dim + j] += w * x[i] * x[j];
                }
            }
        }
        // Gradient components blocked by an active bound are satisfied.
        let effective: Vec<f64> = grad
            .iter()
            .zip(&theta)
            .zip(lower_bounds)
            .map(|((&g, &t), bound)| match bound {
                Some(lo) if t <= *lo && g > 0.0 => 0.0,
                _ => g,
            })
            .collect();
        // The gradient is a sum over samples; converge on its mean.
        grad_norm = effective.iter().map(|g| g * g).sum::<f64>().sqrt() / features.len() as f64;
        if grad_norm < GRAD_TOL {
            return Ok(theta);
        }
        // Tiny ridge keeps the Hessian invertible on degenerate inputs.
        for i in 0..dim {
            hess[i * dim + i] += 1e-12;
        }
        let step = solve_dense(&mut hess, &mut grad.clone(), dim)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut candidate = theta.clone();
            for i in 0..dim {
                candidate[i] -= scale * step[i];
            }
            project(&mut candidate);
            let value = nll(&candidate);
            if value < current {
                theta = candidate;
                current = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No descent direction left: already at numerical optimum.
            return Ok(theta);
        }
    }
    Err(Error::fit_failed(format!(
        "logistic fit did not converge after {MAX_NEWTON_ITERS} iterations (gradient norm {grad_norm:.3e})"
    )))
}

/// Platt scaling parameters: `g(s) = sigmoid(a * logit(s) + b)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
    pub target_smoothing: bool,
}

impl PlattParams {
    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(self.a * logit(score) + self.b)
    }
}

pub fn fit_platt(scores: &[f64], labels: &[u8], target_smoothing: bool) -> Result<PlattParams> {
    check_two_classes(labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let (t_pos, t_neg) = if target_smoothing {
        ((n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    } else {
        (1.0, 0.0)
    };
    let features: Vec<Vec<f64>> = scores.iter().map(|&s| alloc::vec![logit(s), 1.0]).collect();
    let targets: Vec<f64> = labels
        .iter()
        .map(|&y| if y == 1 { t_pos } else { t_neg })
        .collect();
    // Slope constrained nonnegative so the fitted map stays monotone.
    let theta = logistic_mle(
        &features,
        &targets,
        alloc::vec![1.0, 0.0],
        &[Some(0.0), None],
    )?;
    Ok(PlattParams {
        a: theta[0],
        b: theta[1],
        target_smoothing,
    })
}

/// Beta calibration parameters:
/// `g(s) = sigmoid(a * ln(s) - b * ln(1 - s) + c)` with `a, b >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl BetaParams {
    pub fn apply(&self, score: f64) -> f64 {
        let s = clip_unit(score);
        sigmoid(self.a * s.ln() - self.b * (1.0 - s).ln() + self.c)
    }
}

pub fn fit_beta(scores: &[f64], labels: &[u8]) -> Result<BetaParams> {
    check_two_classes(labels)?;
    let features: Vec<Vec<f64>> = scores
        .iter()
        .map(|&s| {
            let s = clip_unit(s);
            alloc::vec![s.ln(), -(1.0 - s).ln(), 1.0]
        })
        .collect();
    let targets: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    let theta = logistic_mle(
        &features,
        &targets,
        alloc::vec![1.0, 1.0, 0.0],
        &[Some(0.0), Some(0.0), None],
    )?;
    Ok(BetaParams {
        a: theta[0],
        b: theta[1],
        c: theta[2],
    })
}

/// Temperature scaling: `g(s) = sigmoid(logit(s) / t)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TemperatureParams {
    pub t: f64,
}

impl TemperatureParams {
    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(logit(score) / self.t)
    }
}

pub const DEFAULT_T_BOUNDS: (f64, f64) = (0.01, 100.0);

pub fn fit_temperature(
    scores: &[f64],
    labels: &[u8],
    t_bounds: (f64, f64),
) -> Result<TemperatureParams> {
    check_two_classes(labels)?;
    let (lo, hi) = t_bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid_config(
            "temperature bounds must satisfy 0 < lo < hi",
        ));
    }
    let logits: Vec<f64> = scores.iter().map(|&s| logit(s)).collect();
    let nll = |t: f64| -> f64 {
        logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| {
                let p = clip_unit(sigmoid(z / t));
                if y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum()
    };

    // Golden-section search; NLL is unimodal in 1/t, hence in t.
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (nll(c), nll(d));
    for _ in 0..200 {
        if b - a < 1e-10 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll(d);
        }
    }
    let interior = 0.5 * (a + b);
    let mut best = interior;
    let mut best_nll = nll(interior);
    for bound in [lo, hi] {
        let f = nll(bound);
        if f < best_nll {
            best = bound;
            best_nll = f;
        }
    }
    Ok(TemperatureParams { t: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn calibrated_data(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.98)).collect();
        let labels = scores
            .iter()
            .map(|&s| u8::from(rng.gen::<f64>() < s))
            .collect();
        (scores, labels)
    }

    #[test]
    fn platt_identity_on_calibrated_data() {
        let (scores, labels) = calibrated_data(60_000, 3);
        let platt = fit_platt(&scores, &labels, false).unwrap();
        for s in [0.1, 0.3, 0.5, 0.7, 0.9] {
            assert!(
                (platt.apply(s) - s).abs() < 0.02,
                "apply({s}) = {}",
                platt.apply(s)
            );
        }
    }

    #[test]
    fn platt_flat_on_shuffled_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 60_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        // Labels independent of scores with mean 0.3.
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.3)).collect();
        let platt = fit_platt(&scores, &labels, false).unwrap();
        assert!(platt.a.abs() < 0.05, "a = {}", platt.a);
        let mean = labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64;
        for s in [0.2, 0.5, 0.8] {
            assert!((platt.apply(s) - mean).abs() < 0.02);
        }
    }

    #[test]
    fn platt_separable_pair_keeps_order() {
        let platt = fit_platt(&[0.3, 0.7], &[0, 1], false).unwrap();
        assert!(platt.apply(0.3) < 0.5);
        assert!(platt.apply(0.7) > 0.5);
    }

    #[test]
    fn platt_rejects_single_class() {
        assert!(fit_platt(&[0.2, 0.4], &[1, 1], false).is_err());
    }

    #[test]
    fn platt_smoothing_shrinks_targets() {
        let plain = fit_platt(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], false).unwrap();
        let smoothed = fit_platt(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], true).unwrap();
        assert!(smoothed.apply(0.95) < plain.apply(0.95));
        assert!(smoothed.apply(0.05) > plain.apply(0.05));
    }

    #[test]
    fn beta_recovers_identity() {
        let (scores, labels) = calibrated_data(60_000, 5);
        let beta = fit_beta(&scores, &labels).unwrap();
        assert!((beta.a - 1.0).abs() < 0.1, "a = {}", beta.a);
        assert!((beta.b - 1.0).abs() < 0.1, "b = {}", beta.b);
        assert!(beta.c.abs() < 0.1, "c = {}", beta.c);
        for s in [0.1, 0.5, 0.9] {
            assert!((beta.apply(s) - s).abs() < 0.02);
        }
    }

    #[test]
    fn beta_projection_keeps_coefficients_nonnegative() {
        // Anti-monotone labels push the unconstrained optimum negative.
        let scores = [0.05, 0.2, 0.4, 0.6, 0.8, 0.95];
        let labels = [1, 1, 1, 0, 0, 0];
        let beta = fit_beta(&scores, &labels).unwrap();
        assert!(beta.a >= 0.0);
        assert!(beta.b >= 0.0);
        for s in [0.01, 0.5, 0.99] {
            let out = beta.apply(s);
            assert!(out > 0.0 && out < 1.0);
        }
    }

    #[test]
    fn temperature_near_one_on_calibrated_data() {
        let (scores, labels) = calibrated_data(60_000, 7);
        let temp = fit_temperature(&scores, &labels, DEFAULT_T_BOUNDS).unwrap();
        assert!((temp.t - 1.0).abs() < 0.05, "t = {}", temp.t);
    }

    #[test]
    fn temperature_hits_upper_bound_on_contradictory_pair() {
        let temp = fit_temperature(&[0.9, 0.9], &[1, 0], DEFAULT_T_BOUNDS).unwrap();
        assert_eq!(temp.t, DEFAULT_T_BOUNDS.1);
        assert!((temp.apply(0.9) - 0.5).abs() < 0.02);
    }

    #[test]
    fn temperature_one_is_identity() {
        let temp = TemperatureParams { t: 1.0 };
        for s in [0.1, 0.4, 0.9] {
            assert!((temp.apply(s) - s).abs() < 1e-9);
        }
    }
}
