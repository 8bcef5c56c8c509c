//! Conjugate Bayesian linear regression.
//!
//! Prior `β | σ² ~ N(0, σ² α⁻¹ I)`, `σ² ~ InvGamma(a₀, b₀)`. The posterior is
//! `β | σ² ~ N(m, σ² Λ⁻¹)` and `σ² ~ InvGamma(a_n, b_n)` with
//! `Λ = XᵀX + αI`, `m = Λ⁻¹Xᵀy`, `a_n = a₀ + n/2` and
//! `b_n = b₀ + ½(yᵀy − mᵀΛm)`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::divergence::{Family, PredictionMatrix, Predictive};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoisePosterior {
    InverseGamma { shape: f64, rate: f64 },
    Fixed { variance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesLinearPosterior {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// `Λ⁻¹`, row-major. The coefficient covariance given `σ²` is `σ² Λ⁻¹`.
    pub scale: Vec<f64>,
    pub noise: NoisePosterior,
    pub num_train: usize,
    pub alpha: f64,
}

impl BayesLinearPosterior {
    /// Degenerate posterior concentrated on `mean` with known noise variance.
    pub fn point(mean: Vec<f64>, noise_var: f64) -> Self {
        let dim = mean.len();
        Self {
            dim,
            mean,
            scale: vec![0.0; dim * dim],
            noise: NoisePosterior::Fixed { variance: noise_var },
            num_train: 0,
            alpha: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.mean.len() != self.dim || self.scale.len() != self.dim * self.dim {
            return Err(Error::ShapeMismatch("linear posterior dimensions are inconsistent".into()));
        }
        match self.noise {
            NoisePosterior::InverseGamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                Err(Error::InvalidArgument(format!("noise posterior needs shape, rate > 0, got ({shape}, {rate})")))
            }
            NoisePosterior::Fixed { variance } if !(variance > 0.0) => {
                Err(Error::InvalidArgument(format!("fixed noise variance must be positive, got {variance}")))
            }
            _ => Ok(()),
        }
    }

    fn scale_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.scale)
    }

    /// Lower Cholesky factor of `Λ⁻¹`; zero for a degenerate posterior.
    fn scale_factor(&self) -> Result<DMatrix<f64>> {
        if self.scale.iter().all(|&v| v == 0.0) {
            return Ok(DMatrix::zeros(self.dim, self.dim));
        }
        self.scale_matrix()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Numerical("posterior scale matrix is not positive definite".into()))
    }

    pub fn scale_trace(&self) -> f64 {
        (0..self.dim).map(|j| self.scale[j * self.dim + j]).sum()
    }
}

fn to_matrix(x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = x.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no training rows".into()))?;
    if d == 0 {
        return Err(Error::InvalidArgument("training rows are empty".into()));
    }
    check_rows(x, d)?;
    Ok(DMatrix::from_fn(x.len(), d, |i, j| x[i][j]))
}

pub fn fit_bayes_linear(x: &[Vec<f64>], y: &[f64], alpha: f64, a0: f64, b0: f64) -> Result<BayesLinearPosterior> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("prior precision must be positive, got {alpha}")));
    }
    if !(a0 > 0.0 && b0 > 0.0) {
        return Err(Error::InvalidArgument(format!("noise prior needs a0, b0 > 0, got ({a0}, {b0})")));
    }
    let xm = to_matrix(x)?;
    if y.len() != xm.nrows() {
        return Err(Error::ShapeMismatch(format!("{} rows but {} targets", xm.nrows(), y.len())));
    }
    let d = xm.ncols();
    let yv = DVector::from_column_slice(y);
    let precision = xm.transpose() * &xm + DMatrix::identity(d, d) * alpha;
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(&(xm.transpose() * &yv));
    let scale = chol.inverse();
    let fit = (mean.transpose() * &precision * &mean)[(0, 0)];
    let shape = a0 + 0.5 * y.len() as f64;
    let rate = (b0 + 0.5 * (yv.dot(&yv) - fit)).max(b0 * 1e-12);

    let mut scale_rows = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            // symmetrize away rounding noise
            scale_rows.push(0.5 * (scale[(i, j)] + scale[(j, i)]));
        }
    }
    Ok(BayesLinearPosterior {
        dim: d,
        mean: mean.iter().copied().collect(),
        scale: scale_rows,
        noise: NoisePosterior::InverseGamma { shape, rate },
        num_train: y.len(),
        alpha,
    })
}

/// Draws `L` joint samples `(β⁽ˡ⁾, σ²⁽ˡ⁾)`.
pub fn sample_bayes_linear(post: &BayesLinearPosterior, num_samples: usize, seed: u64) -> Result<Vec<(Vec<f64>, f64)>> {
    post.validate()?;
    let factor = post.scale_factor()?;
    let mut rng = rng_from_seed(seed);
    let gamma = match post.noise {
        NoisePosterior::InverseGamma { shape, rate } => {
            Some(Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidArgument(format!("gamma: {e}")))?)
        }
        NoisePosterior::Fixed { .. } => None,
    };
    let mut out = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let sigma2 = match (&gamma, post.noise) {
            (Some(g), _) => 1.0 / g.sample(&mut rng),
            (None, NoisePosterior::Fixed { variance }) => variance,
            (None, NoisePosterior::InverseGamma { .. }) => unreachable!(),
        };
        let eps = DVector::from_fn(post.dim, |_, _| StandardNormal.sample(&mut rng));
        let offset = &factor * eps * sigma2.sqrt();
        let beta = post.mean.iter().zip(offset.iter()).map(|(m, o)| m + o).collect();
        out.push((beta, sigma2));
    }
    Ok(out)
}

/// Row `l` of the result holds `N(zᵢ·β⁽ˡ⁾, σ²⁽ˡ⁾)` for every input `zᵢ`.
pub fn predict_bayes_linear(
    post: &BayesLinearPosterior,
    inputs: &[Vec<f64>],
    num_samples: usize,
    seed: u64,
) -> Result<PredictionMatrix> {
    if num_samples == 0 {
        return Err(Error::InvalidArgument("need at least one posterior sample".into()));
    }
    check_rows(inputs, post.dim)?;
    let draws = sample_bayes_linear(post, num_samples, seed)?;
    let mut values = Vec::with_capacity(num_samples * inputs.len());
    for (beta, sigma2) in &draws {
        for z in inputs {
            let mu: f64 = z.iter().zip(beta).map(|(a, b)| a * b).sum();
            values.push(Predictive::gaussian(mu, *sigma2)?);
        }
    }
    PredictionMatrix::new(Family::Gaussian, num_samples, inputs.len(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_targets_give_zero_mean() {
        let x = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]];
        let post = fit_bayes_linear(&x, &[0.0; 3], 1.0, 1.0, 1.0).unwrap();
        assert!(post.mean.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn weak_prior_recovers_ridge_limit() {
        // m = 2 / (2 + α) → 1 as α → 0
        let x = vec![vec![1.0], vec![1.0]];
        for alpha in [1e-2, 1e-4, 1e-8] {
            let post = fit_bayes_linear(&x, &[1.0, 1.0], alpha, 1.0, 1.0).unwrap();
            assert!((post.mean[0] - 2.0 / (2.0 + alpha)).abs() < 1e-12);
        }
        let post = fit_bayes_linear(&x, &[1.0, 1.0], 1e-10, 1.0, 1.0).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicating_data_shrinks_covariance() {
        let x = vec![vec![1.0, 0.3], vec![0.2, -1.0], vec![-0.7, 0.5]];
        let y = [0.4, -0.2, 1.1];
        let once = fit_bayes_linear(&x, &y, 0.5, 2.0, 1.0).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let twice = fit_bayes_linear(&x2, &y2, 0.5, 2.0, 1.0).unwrap();
        assert!(twice.scale_trace() < once.scale_trace());
    }

    #[test]
    fn degenerate_posterior_predicts_mean_exactly() {
        let post = BayesLinearPosterior::point(vec![0.5, -1.25, 2.0], 0.3);
        let z = vec![vec![1.0, 2.0, 3.0], vec![0.1, 0.0, -4.0]];
        let preds = predict_bayes_linear(&post, &z, 1, 9).unwrap();
        for (i, row) in z.iter().enumerate() {
            let expect: f64 = row.iter().zip(&post.mean).map(|(a, b)| a * b).sum();
            assert_eq!(preds.get(0, i), Predictive::Gaussian { mu: expect, sigma2: 0.3 });
        }
    }

    #[test]
    fn sampling_is_deterministic_and_concentrates() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![1.0, (i as f64 * 0.37).sin()]).collect();
        let y: Vec<f64> = x.iter().map(|r| 0.5 + 2.0 * r[1]).collect();
        let post = fit_bayes_linear(&x, &y, 1.0, 2.0, 0.5).unwrap();
        let z = vec![vec![1.0, 0.5], vec![1.0, -0.3]];
        let a = predict_bayes_linear(&post, &z, 5, 42).unwrap();
        let b = predict_bayes_linear(&post, &z, 5, 42).unwrap();
        assert_eq!(a, b);

        let draws = 10_000;
        let preds = predict_bayes_linear(&post, &z, draws, 7).unwrap();
        for (i, zi) in z.iter().enumerate() {
            let mus: Vec<f64> = (0..draws).map(|l| preds.get(l, i).mean()).collect();
            let avg = mus.iter().sum::<f64>() / draws as f64;
            let var = mus.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let target: f64 = zi.iter().zip(&post.mean).map(|(a, b)| a * b).sum();
            let se = (var / draws as f64).sqrt();
            assert!((avg - target).abs() <= 3.0 * se, "point {i}: {avg} vs {target} (se {se})");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_bayes_linear(&[vec![1.0]], &[1.0], 0.0, 1.0, 1.0).is_err());
        assert!(fit_bayes_linear(&[vec![1.0]], &[1.0, 2.0], 1.0, 1.0, 1.0).is_err());
        let post = BayesLinearPosterior::point(vec![1.0], 1.0);
        assert!(predict_bayes_linear(&post, &[vec![1.0, 2.0]], 1, 0).is_err());
        assert!(predict_bayes_linear(&post, &[vec![1.0]], 0, 0).is_err());
    }
}
