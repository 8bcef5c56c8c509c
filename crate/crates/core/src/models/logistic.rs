//! Bayesian logistic regression with a Laplace approximation.
//!
//! Parameters `θ = (θ₀, θ₁, …, θ_d)` include an intercept; the prior is
//! `N(0, α⁻¹ I)` on all of them. The MAP is found by damped Newton iterations
//! and the posterior is approximated by `N(θ_MAP, H⁻¹)` with `H` the negative
//! Hessian of the log posterior at the MAP.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::divergence::{Family, PredictionMatrix, Predictive};
use crate::error::{Error, Result};
use crate::projection::sigmoid;
use crate::rng::rng_from_seed;

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesLogisticPosterior {
    /// Number of input features (the intercept is extra).
    pub dim: usize,
    /// `[θ₀, θ₁, …, θ_d]`
    pub map: Vec<f64>,
    /// Laplace covariance `H⁻¹`, row-major `(d+1) × (d+1)`.
    pub covariance: Vec<f64>,
    pub alpha: f64,
    pub num_train: usize,
}

impl BayesLogisticPosterior {
    pub fn validate(&self) -> Result<()> {
        let k = self.dim + 1;
        if self.dim == 0 || self.map.len() != k || self.covariance.len() != k * k {
            return Err(Error::ShapeMismatch("logistic posterior dimensions are inconsistent".into()));
        }
        Ok(())
    }

    /// Probability of class 1 at `z` under the MAP parameters.
    pub fn map_probability(&self, z: &[f64]) -> f64 {
        sigmoid(self.map[0] + z.iter().zip(&self.map[1..]).map(|(a, b)| a * b).sum::<f64>())
    }

    /// `L` Laplace draws of `θ`.
    pub fn sample_parameters(&self, num_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let k = self.dim + 1;
        let factor = DMatrix::from_row_slice(k, k, &self.covariance)
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Numerical("Laplace covariance is not positive definite".into()))?;
        let mut rng = rng_from_seed(seed);
        Ok((0..num_samples)
            .map(|_| {
                let eps = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
                let offset = &factor * eps;
                self.map.iter().zip(offset.iter()).map(|(m, o)| m + o).collect()
            })
            .collect())
    }
}

fn design(x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = x.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no training rows".into()))?;
    if d == 0 {
        return Err(Error::InvalidArgument("training rows are empty".into()));
    }
    check_rows(x, d)?;
    Ok(DMatrix::from_fn(x.len(), d + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] }))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_posterior(a: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, theta: &DVector<f64>) -> f64 {
    let eta = a * theta;
    let ll: f64 = eta.iter().zip(y.iter()).map(|(e, yi)| yi * e - softplus(*e)).sum();
    ll - 0.5 * alpha * theta.dot(theta)
}

fn gradient(a: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, theta: &DVector<f64>) -> DVector<f64> {
    let eta = a * theta;
    let resid = DVector::from_fn(y.len(), |i, _| y[i] - sigmoid(eta[i]));
    a.transpose() * resid - theta * alpha
}

/// Gradient of the log posterior `Σ [yᵢηᵢ − log(1 + e^{ηᵢ})] − ½α‖θ‖²`.
pub fn log_posterior_gradient(x: &[Vec<f64>], y: &[f64], alpha: f64, theta: &[f64]) -> Result<Vec<f64>> {
    let a = design(x)?;
    if theta.len() != a.ncols() || y.len() != a.nrows() {
        return Err(Error::ShapeMismatch("parameters or labels do not match the data".into()));
    }
    let g = gradient(&a, &DVector::from_column_slice(y), alpha, &DVector::from_column_slice(theta));
    Ok(g.iter().copied().collect())
}

pub fn fit_bayes_logistic(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<BayesLogisticPosterior> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("prior precision must be positive, got {alpha}")));
    }
    let a = design(x)?;
    if y.len() != a.nrows() {
        return Err(Error::ShapeMismatch(format!("{} rows but {} labels", a.nrows(), y.len())));
    }
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("label {i} is {} (expected 0 or 1)", y[i])));
    }
    let k = a.ncols();
    let yv = DVector::from_column_slice(y);
    let mut theta = DVector::zeros(k);
    let mut value = log_posterior(&a, &yv, alpha, &theta);

    let hessian = |theta: &DVector<f64>| {
        let eta = &a * theta;
        let mut h = DMatrix::identity(k, k) * alpha;
        for i in 0..a.nrows() {
            let q = sigmoid(eta[i]);
            let w = q * (1.0 - q);
            let row = a.row(i);
            h += row.transpose() * row * w;
        }
        h
    };

    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITERS {
        let g = gradient(&a, &yv, alpha, &theta);
        if g.norm() <= NEWTON_TOL {
            converged = true;
            break;
        }
        let step = hessian(&theta)
            .cholesky()
            .ok_or_else(|| Error::Numerical("Hessian lost positive definiteness".into()))?
            .solve(&g);
        // below this Newton decrement objective differences are rounding noise
        let decrement = g.dot(&step);
        let mut t = 1.0;
        loop {
            let candidate = &theta + &step * t;
            let cand_value = log_posterior(&a, &yv, alpha, &candidate);
            if cand_value >= value || decrement < 1e-12 || t < 1e-12 {
                theta = candidate;
                value = cand_value;
                break;
            }
            t *= 0.5;
        }
    }
    if !converged {
        let g = gradient(&a, &yv, alpha, &theta);
        if g.norm() > NEWTON_TOL {
            return Err(Error::Numerical(format!(
                "Newton iterations did not converge: gradient norm {:e} after {NEWTON_MAX_ITERS} iterations",
                g.norm()
            )));
        }
    }
    let cov = hessian(&theta)
        .cholesky()
        .ok_or_else(|| Error::Numerical("Hessian at the MAP is not positive definite".into()))?
        .inverse();
    let mut covariance = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            covariance.push(0.5 * (cov[(i, j)] + cov[(j, i)]));
        }
    }
    Ok(BayesLogisticPosterior { dim: k - 1, map: theta.iter().copied().collect(), covariance, alpha, num_train: y.len() })
}

/// Row `l` holds `Bern(sigmoid(θ₀⁽ˡ⁾ + zᵢ·θ⁽ˡ⁾))` for every input `zᵢ`.
pub fn predict_bayes_logistic(
    post: &BayesLogisticPosterior,
    inputs: &[Vec<f64>],
    num_samples: usize,
    seed: u64,
) -> Result<PredictionMatrix> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("need at least one posterior sample".into()));
    }
    check_rows(inputs, post.dim)?;
    let draws = post.sample_parameters(num_samples, seed)?;
    let mut values = Vec::with_capacity(num_samples * inputs.len());
    for theta in &draws {
        for z in inputs {
            let eta = theta[0] + z.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
            values.push(Predictive::bernoulli(sigmoid(eta))?);
        }
    }
    PredictionMatrix::new(Family::Bernoulli, num_samples, inputs.len(), values)
}
