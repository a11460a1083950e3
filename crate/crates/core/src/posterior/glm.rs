//! Penalized generalized linear model fitting.
//!
//! Logistic fits use Newton / iteratively reweighted least squares on the
//! average log-likelihood with an L2 penalty on every coefficient except the
//! intercept; identity fits are closed-form ridge regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-10;
/// Probabilities are kept strictly inside (0, 1).
pub const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logistic,
    Identity,
}

/// Coefficients with the intercept first, plus the penalized information matrix inverse.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    /// `(XᵀWX + nλĨ)⁻¹`, the Wald covariance. `None` when the matrix could not be inverted.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn sigmoid(eta: f64) -> f64 {
    let p = if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Linear predictor `β₀ + Σ βₖ xₖ` for one row (without the intercept column).
pub fn linear_predictor(coefficients: &[f64], row: &[f64]) -> f64 {
    coefficients[0]
        + coefficients[1..]
            .iter()
            .zip(row)
            .map(|(b, x)| b * x)
            .sum::<f64>()
}

fn design(rows: &[Vec<f64>], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p + 1, |i, k| if k == 0 { 1.0 } else { rows[i][k - 1] })
}

fn check_shape(rows: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::contract("cannot fit a model on zero rows"));
    }
    if rows.len() != y.len() {
        return Err(Error::contract("feature rows and outcomes differ in length"));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::contract("ragged feature rows"));
    }
    Ok(p)
}

fn penalty_diag(p: usize, scale: f64) -> DMatrix<f64> {
    let mut d = DMatrix::identity(p + 1, p + 1) * scale;
    d[(0, 0)] = 0.0;
    d
}

fn penalized_objective(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let n = y.len() as f64;
    let eta = x * beta;
    let ll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log σ(e) = -softplus(-e), log(1-σ(e)) = -softplus(e)
            yi * -softplus(-e) + (1.0 - yi) * -softplus(e)
        })
        .sum();
    let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    ll / n - 0.5 * l2 * pen
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fits `P(y = 1 | x) = σ(β₀ + βᵀx)` with `y ∈ {0, 1}`.
pub fn fit_logistic(rows: &[Vec<f64>], y: &[f64], l2: f64) -> Result<GlmFit> {
    let p = check_shape(rows, y)?;
    let n = rows.len() as f64;
    let x = design(rows, p);
    let pen = penalty_diag(p, l2);
    let mut beta = DVector::zeros(p + 1);
    let mut objective = penalized_objective(&x, y, &beta, l2);
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..MAX_ITERATIONS {
        iterations = it + 1;
        let eta = &x * &beta;
        let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&probs).map(|(yi, pi)| yi - pi));
        let mut grad = x.tr_mul(&resid) / n;
        for k in 1..=p {
            grad[k] -= l2 * beta[k];
        }
        let w = DVector::from_iterator(probs.len(), probs.iter().map(|pi| pi * (1.0 - pi)));
        let info = weighted_gram(&x, &w) / n + &pen;
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match info.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };

        // Backtracking keeps the penalized objective monotone on near-separable data.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let cand_obj = penalized_objective(&x, y, &candidate, l2);
            if cand_obj >= objective - 1e-15 {
                beta = candidate;
                objective = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let max_step = step.amax() * scale;
        if !accepted || max_step < TOLERANCE {
            converged = accepted || max_step < TOLERANCE;
            break;
        }
    }

    let eta = &x * &beta;
    let w = DVector::from_iterator(y.len(), eta.iter().map(|&e| {
        let pi = sigmoid(e);
        pi * (1.0 - pi)
    }));
    let info = weighted_gram(&x, &w) + penalty_diag(p, l2 * n);
    let covariance = info.try_inverse().filter(|c| c.iter().all(|v| v.is_finite()));

    Ok(GlmFit {
        coefficients: beta.iter().copied().collect(),
        covariance,
        iterations,
        converged,
    })
}

/// Ridge regression of `y` on `x` with an unpenalized intercept.
pub fn fit_identity(rows: &[Vec<f64>], y: &[f64], l2: f64) -> Result<GlmFit> {
    let p = check_shape(rows, y)?;
    let n = rows.len() as f64;
    let x = design(rows, p);
    let yv = DVector::from_column_slice(y);
    let gram = x.tr_mul(&x) / n + penalty_diag(p, l2);
    let rhs = x.tr_mul(&yv) / n;
    let beta = gram
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Pipeline("singular normal equations".into()))?;
    let covariance = (gram * n).try_inverse();
    Ok(GlmFit {
        coefficients: beta.iter().copied().collect(),
        covariance,
        iterations: 1,
        converged: true,
    })
}

pub fn fit(link: Link, rows: &[Vec<f64>], y: &[f64], l2: f64) -> Result<GlmFit> {
    match link {
        Link::Logistic => fit_logistic(rows, y, l2),
        Link::Identity => fit_identity(rows, y, l2),
    }
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    x.tr_mul(&xw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) < 1.0);
        assert!(sigmoid(-800.0) > 0.0);
        assert!((sigmoid(logit(0.3)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn logistic_recovers_known_coefficients() {
        // Deterministic design with exact cell frequencies for (x, y).
        let mut rows = Vec::new();
        let mut y = Vec::new();
        // P(y=1|x=0) = 0.25, P(y=1|x=1) = 0.75 → β₀ = logit(.25), β₁ = logit(.75) - logit(.25).
        for (x, ones, total) in [(0.0, 25, 100), (1.0, 75, 100)] {
            for i in 0..total {
                rows.push(vec![x]);
                y.push(if i < ones { 1.0 } else { 0.0 });
            }
        }
        let f = fit_logistic(&rows, &y, 0.0).unwrap();
        assert!(f.converged);
        assert!((f.coefficients[0] - logit(0.25)).abs() < 1e-8);
        assert!((f.coefficients[1] - (logit(0.75) - logit(0.25))).abs() < 1e-8);
    }

    #[test]
    fn separable_data_gives_bounded_coefficients() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 2) as f64]).collect();
        let y: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
        let f = fit_logistic(&rows, &y, 1e-4).unwrap();
        assert!(f.coefficients.iter().all(|b| b.is_finite() && b.abs() < 100.0));
        for r in &rows {
            let p = sigmoid(linear_predictor(&f.coefficients, r));
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn identity_fit_is_least_squares() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 + 0.5 * i as f64).collect();
        let f = fit_identity(&rows, &y, 0.0).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((f.coefficients[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        assert!(fit_logistic(&[], &[], 1e-4).is_err());
        assert!(fit_logistic(&[vec![1.0]], &[1.0, 0.0], 1e-4).is_err());
    }
}
