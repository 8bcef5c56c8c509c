//! KL projection of predictive distributions onto sparse GLM explanations.
//!
//! For one posterior draw with predictions `t_i` over the locality, the
//! explanation `φ = (β₀, β)` minimizes
//!
//! ```text
//!     Σ_i w_i KL(p(y | z_i, θ) ‖ p(y | z'_i, φ)) + λ‖β‖₁
//! ```
//!
//! with an unpenalized intercept.
//!
//! * **Bernoulli**: `q_i = sigmoid(β₀ + β·z'_i)`; the objective is a
//!   soft-target cross-entropy, minimized by IRLS (proximal Newton) with a
//!   backtracking line search on the exact objective.
//! * **Gaussian**: `N(β₀ + β·z'_i, σ²_s)`. For fixed mean parameters the KL
//!   is minimized by `σ²_s = Σ w_i σ²_i + Σ w_i r_i²`, and the remaining
//!   mean problem is weighted least squares `½ Σ w_i r_i² + λ‖β‖₁`.
//!
//! Each quadratic subproblem is solved by cyclic coordinate descent with
//! soft-thresholding on the weighted-centered Gram matrix, followed by an
//! exact solve of the KKT system on the converged active set.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    clamp_probability, information_loss, weighted_row_loss, Family, PredictionMatrix, Predictive, EPS_P,
    MIN_VARIANCE,
};
use crate::error::{Error, Result};
use crate::perturb::PerturbationBatch;

/// Linear predictors are clamped to this magnitude when forming IRLS weights.
pub const ETA_CLAMP: f64 = 30.0;
/// Bernoulli coefficients are capped at this magnitude (separation guard).
pub const COEF_CAP: f64 = 1e3;
const MAX_IRLS_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaGrid {
    /// Strictly decreasing, non-negative penalties.
    Explicit { values: Vec<f64> },
    /// `num_lambdas` points spaced geometrically from `λ_max` down to `min_ratio · λ_max`.
    Auto { num_lambdas: usize, min_ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda_grid: LambdaGrid,
    /// Coordinate-descent sweep limit per quadratic subproblem.
    pub max_iters: usize,
    /// Convergence threshold on the largest absolute coefficient change.
    pub tol: f64,
    /// Initial IRLS step length in `(0, 1]`.
    pub irls_damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_grid: LambdaGrid::Auto { num_lambdas: 50, min_ratio: 1e-3 },
            max_iters: 10_000,
            tol: 1e-7,
            irls_damping: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.irls_damping > 0.0 && self.irls_damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "irls_damping must lie in (0, 1], got {}",
                self.irls_damping
            )));
        }
        match &self.lambda_grid {
            LambdaGrid::Explicit { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidArgument("lambda grid is empty".into()));
                }
                if values.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err(Error::InvalidArgument("lambda grid values must be finite and >= 0".into()));
                }
                if values.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::InvalidArgument("lambda grid must be strictly decreasing".into()));
                }
            }
            LambdaGrid::Auto { num_lambdas, min_ratio } => {
                if *num_lambdas == 0 {
                    return Err(Error::InvalidArgument("num_lambdas must be at least 1".into()));
                }
                if !(*min_ratio > 0.0 && *min_ratio < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "lambda_min_ratio must lie in (0, 1), got {min_ratio}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Concrete penalties for a path anchored at `lambda_max`.
    ///
    /// A zero `lambda_max` (predictions constant over the locality) anchors
    /// the automatic grid at 1; every fit on it is then intercept-only.
    pub fn resolve_grid(&self, lambda_max: f64) -> Vec<f64> {
        match &self.lambda_grid {
            LambdaGrid::Explicit { values } => values.clone(),
            LambdaGrid::Auto { num_lambdas, min_ratio } => {
                let top = if lambda_max > 0.0 { lambda_max } else { 1.0 };
                if *num_lambdas == 1 {
                    return vec![top];
                }
                let steps = (*num_lambdas - 1) as f64;
                (0..*num_lambdas).map(|k| top * min_ratio.powf(k as f64 / steps)).collect()
            }
        }
    }
}

/// One projected explanation for one posterior draw at one penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationModel {
    pub family: Family,
    pub intercept: f64,
    /// Non-zero coefficients keyed by instance position.
    pub coefficients: BTreeMap<usize, f64>,
    /// Projected noise variance (Gaussian family only).
    pub noise_var: Option<f64>,
    pub lambda: f64,
    /// Achieved weighted KL divergence from the full model, in nats.
    pub kl_loss: f64,
    pub converged: bool,
    /// A Bernoulli coefficient hit [`COEF_CAP`].
    pub saturated: bool,
}

impl ExplanationModel {
    pub fn nnz(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficient(&self, position: usize) -> f64 {
        self.coefficients.get(&position).copied().unwrap_or(0.0)
    }

    pub fn linear_predictor(&self, rep_row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().map(|(&j, &b)| b * rep_row[j]).sum::<f64>()
    }

    /// Predictive distribution of the explanation at an interpretable point.
    pub fn predictive(&self, rep_row: &[f64]) -> Predictive {
        let eta = self.linear_predictor(rep_row);
        match self.family {
            Family::Bernoulli => Predictive::Bernoulli { p: sigmoid(eta).clamp(EPS_P, 1.0 - EPS_P) },
            Family::Gaussian => Predictive::Gaussian { mu: eta, sigma2: self.noise_var.unwrap_or(MIN_VARIANCE) },
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Active columns of the interpretable design, column-major.
struct Design<'a> {
    n: usize,
    positions: &'a [usize],
    cols: Vec<f64>,
    weights: &'a [f64],
}

impl<'a> Design<'a> {
    fn new(batch: &'a PerturbationBatch) -> Self {
        let n = batch.len();
        let d = batch.dim();
        let positions = batch.features();
        let reps = batch.reps();
        let mut cols = Vec::with_capacity(n * positions.len());
        for &j in positions {
            cols.extend((0..n).map(|i| reps[i * d + j]));
        }
        Self { n, positions, cols, weights: batch.weights() }
    }

    fn p(&self) -> usize {
        self.positions.len()
    }

    fn col(&self, k: usize) -> &[f64] {
        &self.cols[k * self.n..(k + 1) * self.n]
    }

    fn linear_predictor(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![intercept; self.n];
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(self.col(k)) {
                    *e += b * x;
                }
            }
        }
        eta
    }
}

/// Weighted mean; exact when all values coincide.
fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    if values.iter().all(|&v| v == values[0]) {
        return values[0];
    }
    let sw: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / sw
}

/// `½ Σ W_i (y_i − β₀ − x_i·β)²` after profiling out the intercept, stored as
/// the centered Gram matrix `G` and linear term `c`.
struct Quadratic {
    p: usize,
    gram: Vec<f64>,
    c: Vec<f64>,
    xbar: Vec<f64>,
    ybar: f64,
    gmax: f64,
}

impl Quadratic {
    /// `wy[i]` is `W_i · y_i`, passed pre-multiplied so callers can form it stably.
    fn build(design: &Design, work_w: &[f64], wy: &[f64]) -> Self {
        let n = design.n;
        let p = design.p();
        let sw: f64 = work_w.iter().sum();
        let ybar = wy.iter().sum::<f64>() / sw;
        let mut xbar = vec![0.0; p];
        let mut centered = vec![0.0; n * p];
        for k in 0..p {
            let col = design.col(k);
            xbar[k] = col.iter().zip(work_w).map(|(x, w)| x * w).sum::<f64>() / sw;
            for i in 0..n {
                centered[k * n + i] = col[i] - xbar[k];
            }
        }
        let resid: Vec<f64> = wy.iter().zip(work_w).map(|(u, w)| u - w * ybar).collect();
        let mut gram = vec![0.0; p * p];
        let mut c = vec![0.0; p];
        let mut scaled = vec![0.0; n];
        for k in 0..p {
            let xk = &centered[k * n..(k + 1) * n];
            c[k] = xk.iter().zip(&resid).map(|(x, r)| x * r).sum();
            for i in 0..n {
                scaled[i] = xk[i] * work_w[i];
            }
            for l in k..p {
                let xl = &centered[l * n..(l + 1) * n];
                let g: f64 = scaled.iter().zip(xl).map(|(a, b)| a * b).sum();
                gram[k * p + l] = g;
                gram[l * p + k] = g;
            }
        }
        let gmax = (0..p).map(|k| gram[k * p + k]).fold(0.0, f64::max);
        Self { p, gram, c, xbar, ybar, gmax }
    }

    fn degenerate(&self, k: usize) -> bool {
        let gkk = self.gram[k * self.p + k];
        gkk <= 0.0 || gkk <= 1e-12 * self.gmax
    }

    fn intercept(&self, beta: &[f64]) -> f64 {
        self.ybar - self.xbar.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>()
    }

    /// `½ βᵀGβ − cᵀβ + λ‖β‖₁`
    fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let mut quad = 0.0;
        for k in 0..self.p {
            if beta[k] == 0.0 {
                continue;
            }
            let row = &self.gram[k * self.p..(k + 1) * self.p];
            let gb: f64 = row.iter().zip(beta).map(|(g, b)| g * b).sum();
            quad += beta[k] * gb;
        }
        let lin: f64 = self.c.iter().zip(beta).map(|(c, b)| c * b).sum();
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        0.5 * quad - lin + lambda * l1
    }

    /// Cyclic coordinate descent from `beta`. Returns whether the largest
    /// coefficient change in the last sweep fell below `tol`.
    fn coordinate_descent(&self, beta: &mut [f64], lambda: f64, tol: f64, max_sweeps: usize) -> bool {
        let p = self.p;
        // g = c − Gβ
        let mut g = self.c.clone();
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                let row = &self.gram[k * p..(k + 1) * p];
                for (gi, gk) in g.iter_mut().zip(row) {
                    *gi -= gk * b;
                }
            }
        }
        let penalized = |g: &[f64], beta: &[f64]| -> f64 {
            // ½βᵀGβ − cᵀβ = −½ βᵀ(c + g)
            let mut v = 0.0;
            for k in 0..p {
                v += -0.5 * beta[k] * (self.c[k] + g[k]) + lambda * beta[k].abs();
            }
            v
        };
        let mut previous = if cfg!(debug_assertions) { penalized(&g, beta) } else { 0.0 };

        for _ in 0..max_sweeps {
            let mut max_change: f64 = 0.0;
            for k in 0..p {
                let gkk = self.gram[k * p + k];
                let new = if self.degenerate(k) { 0.0 } else { soft_threshold(g[k] + gkk * beta[k], lambda) / gkk };
                let delta = new - beta[k];
                if delta != 0.0 {
                    let row = &self.gram[k * p..(k + 1) * p];
                    for (gi, gk) in g.iter_mut().zip(row) {
                        *gi -= gk * delta;
                    }
                    beta[k] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if cfg!(debug_assertions) {
                let current = penalized(&g, beta);
                debug_assert!(
                    current <= previous + 1e-9 * (1.0 + previous.abs()),
                    "coordinate descent sweep increased the objective: {previous} -> {current}"
                );
                previous = current;
            }
            if max_change < tol {
                return true;
            }
        }
        false
    }

    /// Solves the KKT system on the active set of a converged iterate and
    /// keeps the result when it is a valid, no-worse optimum.
    fn polish(&self, beta: &mut [f64], lambda: f64) {
        let p = self.p;
        let active: Vec<usize> = (0..p).filter(|&k| beta[k] != 0.0).collect();
        if active.is_empty() {
            return;
        }
        let m = active.len();
        let gaa = DMatrix::from_fn(m, m, |a, b| self.gram[active[a] * p + active[b]]);
        let rhs = DVector::from_fn(m, |a, _| {
            let k = active[a];
            self.c[k] - lambda * beta[k].signum()
        });
        let Some(chol) = gaa.cholesky() else { return };
        let sol = chol.solve(&rhs);
        let mut candidate = vec![0.0; p];
        for (a, &k) in active.iter().enumerate() {
            let v = sol[a];
            if !v.is_finite() || v.signum() != beta[k].signum() || v == 0.0 {
                return;
            }
            candidate[k] = v;
        }
        // inactive coordinates must satisfy |c_k − (Gβ)_k| ≤ λ
        for k in 0..p {
            if candidate[k] != 0.0 || self.degenerate(k) {
                continue;
            }
            let row = &self.gram[k * p..(k + 1) * p];
            let gk = self.c[k] - row.iter().zip(&candidate).map(|(g, b)| g * b).sum::<f64>();
            if gk.abs() > lambda * (1.0 + 1e-9) + 1e-14 * (1.0 + self.gmax) {
                return;
            }
        }
        if self.objective(&candidate, lambda) <= self.objective(beta, lambda) {
            beta.copy_from_slice(&candidate);
        }
    }
}

fn targets_of(targets: &[Predictive], family: Family) -> Result<Vec<f64>> {
    targets
        .iter()
        .map(|t| {
            if t.family() != family {
                Err(Error::FamilyMismatch { expected: family.to_string(), found: t.family().to_string() })
            } else {
                Ok(t.mean())
            }
        })
        .collect()
}

fn check_batch(batch: &PerturbationBatch, targets: &[Predictive]) -> Result<()> {
    if targets.len() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for a batch of {} points",
            targets.len(),
            batch.len()
        )));
    }
    Ok(())
}

fn lambda_max_on(design: &Design, means: &[f64]) -> f64 {
    if means.iter().all(|&t| t == means[0]) {
        return 0.0;
    }
    let wy: Vec<f64> = means.iter().zip(design.weights).map(|(t, w)| t * w).collect();
    let q = Quadratic::build(design, design.weights, &wy);
    (0..q.p).filter(|&k| !q.degenerate(k)).map(|k| q.c[k].abs()).fold(0.0, f64::max)
}

/// Smallest penalty at which the all-zero coefficient vector is optimal:
/// `max_j |Σ_i w_i z'_ij (t_i − t̄)|` over the active positions, with `t̄`
/// the intercept-only prediction.
pub fn lambda_max(batch: &PerturbationBatch, targets: &[Predictive], family: Family) -> Result<f64> {
    check_batch(batch, targets)?;
    let means = targets_of(targets, family)?;
    Ok(lambda_max_on(&Design::new(batch), &means))
}

struct Fit {
    intercept: f64,
    beta: Vec<f64>,
    converged: bool,
    saturated: bool,
}

fn null_fit(design: &Design, means: &[f64], family: Family) -> Fit {
    let tbar = weighted_mean(means, design.weights);
    let intercept = match family {
        Family::Gaussian => tbar,
        Family::Bernoulli => {
            let p = tbar.clamp(EPS_P, 1.0 - EPS_P);
            (p / (1.0 - p)).ln()
        }
    };
    Fit { intercept, beta: vec![0.0; design.p()], converged: true, saturated: false }
}

fn finish(
    design: &Design,
    targets: &[Predictive],
    family: Family,
    lambda: f64,
    fit: Fit,
) -> Result<ExplanationModel> {
    let eta = design.linear_predictor(fit.intercept, &fit.beta);
    let (expl, noise_var): (Vec<Predictive>, Option<f64>) = match family {
        Family::Bernoulli => {
            (eta.iter().map(|&e| Predictive::Bernoulli { p: sigmoid(e).clamp(EPS_P, 1.0 - EPS_P) }).collect(), None)
        }
        Family::Gaussian => {
            let mut var = 0.0;
            for ((t, e), w) in targets.iter().zip(&eta).zip(design.weights) {
                if let Predictive::Gaussian { mu, sigma2 } = *t {
                    let r = mu - e;
                    var += w * (sigma2 + r * r);
                }
            }
            let var = var.max(MIN_VARIANCE);
            (eta.iter().map(|&e| Predictive::Gaussian { mu: e, sigma2: var }).collect(), Some(var))
        }
    };
    let kl_loss = weighted_row_loss(targets, &expl, design.weights)?;
    let coefficients = design
        .positions
        .iter()
        .zip(&fit.beta)
        .filter(|(_, &b)| b != 0.0)
        .map(|(&j, &b)| (j, b))
        .collect();
    Ok(ExplanationModel {
        family,
        intercept: fit.intercept,
        coefficients,
        noise_var,
        lambda,
        kl_loss,
        converged: fit.converged,
        saturated: fit.saturated,
    })
}

fn fit_gaussian(quad: &Quadratic, lambda: f64, init: Option<&[f64]>, config: &SolverConfig) -> Fit {
    let mut beta = init.map_or_else(|| vec![0.0; quad.p], <[f64]>::to_vec);
    let converged = quad.coordinate_descent(&mut beta, lambda, config.tol, config.max_iters);
    if converged {
        quad.polish(&mut beta, lambda);
    }
    Fit { intercept: quad.intercept(&beta), beta, converged, saturated: false }
}

/// Soft-target logistic KL plus L1 penalty, dropping nothing: the value is
/// `Σ w_i KL(Bern(p_i) ‖ Bern(sigmoid(η_i))) + λ‖β‖₁`.
fn bernoulli_objective_on(design: &Design, probs: &[f64], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let eta = design.linear_predictor(intercept, beta);
    let mut total = 0.0;
    for ((&p, &e), &w) in probs.iter().zip(&eta).zip(design.weights) {
        let entropy = p * p.ln() + (1.0 - p) * (1.0 - p).ln();
        total += w * (entropy + p * softplus(-e) + (1.0 - p) * softplus(e));
    }
    total + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

fn fit_bernoulli(
    design: &Design,
    probs: &[f64],
    lambda: f64,
    init: Option<(f64, &[f64])>,
    config: &SolverConfig,
) -> Fit {
    let p = design.p();
    let (mut intercept, mut beta) = match init {
        Some((b0, b)) => (b0, b.to_vec()),
        None => {
            let null = null_fit(design, probs, Family::Bernoulli);
            (null.intercept, null.beta)
        }
    };
    let mut objective = bernoulli_objective_on(design, probs, intercept, &beta, lambda);
    let mut converged = false;
    let mut inner_ok = true;
    let mut saturated = false;

    for _ in 0..MAX_IRLS_ITERS {
        let eta = design.linear_predictor(intercept, &beta);
        let mut work_w = vec![0.0; design.n];
        let mut wy = vec![0.0; design.n];
        for i in 0..design.n {
            let e = eta[i].clamp(-ETA_CLAMP, ETA_CLAMP);
            let q = sigmoid(e);
            let w = design.weights[i];
            work_w[i] = w * q * (1.0 - q);
            // W·y with y = η + (p − q) / (q(1 − q))
            wy[i] = work_w[i] * e + w * (probs[i] - q);
        }
        if work_w.iter().sum::<f64>() <= 0.0 {
            break;
        }
        let quad = Quadratic::build(design, &work_w, &wy);
        let mut proposal = beta.clone();
        let ok = quad.coordinate_descent(&mut proposal, lambda, config.tol, config.max_iters);
        if ok {
            quad.polish(&mut proposal, lambda);
        }
        inner_ok &= ok;
        let proposal_intercept = quad.intercept(&proposal);

        let d0 = proposal_intercept - intercept;
        let dbeta: Vec<f64> = proposal.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let dmax = dbeta.iter().fold(d0.abs(), |m, d| m.max(d.abs()));
        if dmax < config.tol {
            converged = true;
            break;
        }

        let mut step = config.irls_damping;
        let mut accepted = None;
        while step >= 1e-10 {
            let cand_b0 = intercept + step * d0;
            let mut capped = false;
            let cand: Vec<f64> = (0..p)
                .map(|k| {
                    let v = beta[k] + step * dbeta[k];
                    if v.abs() > COEF_CAP {
                        capped = true;
                        v.signum() * COEF_CAP
                    } else {
                        v
                    }
                })
                .collect();
            let value = bernoulli_objective_on(design, probs, cand_b0, &cand, lambda);
            if value <= objective + 1e-13 * objective.abs() {
                accepted = Some((cand_b0, cand, value, capped));
                break;
            }
            step *= 0.5;
        }
        let Some((b0, b, value, capped)) = accepted else {
            // no descent along the Newton direction: the iterate is optimal to working precision
            converged = true;
            break;
        };
        saturated |= capped;
        let change = (b0 - intercept).abs().max(b.iter().zip(&beta).fold(0.0, |m, (x, y)| m.max((x - y).abs())));
        intercept = b0;
        beta = b;
        objective = value;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    Fit { intercept, beta, converged: converged && inner_ok, saturated }
}

fn project_on(
    design: &Design,
    targets: &[Predictive],
    family: Family,
    lambda: f64,
    config: &SolverConfig,
) -> Result<ExplanationModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let means = targets_of(targets, family)?;
    let lmax = lambda_max_on(design, &means);
    let fit = if lambda >= lmax {
        null_fit(design, &means, family)
    } else {
        match family {
            Family::Gaussian => {
                let wy: Vec<f64> = means.iter().zip(design.weights).map(|(t, w)| t * w).collect();
                let quad = Quadratic::build(design, design.weights, &wy);
                fit_gaussian(&quad, lambda, None, config)
            }
            Family::Bernoulli => fit_bernoulli(design, &means, lambda, None, config),
        }
    };
    finish(design, targets, family, lambda, fit)
}

/// Gaussian projection at a single penalty.
pub fn project_gaussian(
    batch: &PerturbationBatch,
    targets: &[Predictive],
    lambda: f64,
    config: &SolverConfig,
) -> Result<ExplanationModel> {
    check_batch(batch, targets)?;
    project_on(&Design::new(batch), targets, Family::Gaussian, lambda, config)
}

/// Bernoulli (logistic) projection at a single penalty.
pub fn project_bernoulli(
    batch: &PerturbationBatch,
    targets: &[Predictive],
    lambda: f64,
    config: &SolverConfig,
) -> Result<ExplanationModel> {
    check_batch(batch, targets)?;
    project_on(&Design::new(batch), targets, Family::Bernoulli, lambda, config)
}

/// Projection at a single penalty for whichever family the targets belong to.
pub fn project(
    batch: &PerturbationBatch,
    targets: &[Predictive],
    lambda: f64,
    config: &SolverConfig,
) -> Result<ExplanationModel> {
    let family = targets.first().map(Predictive::family).ok_or_else(|| Error::InvalidArgument("no targets".into()))?;
    check_batch(batch, targets)?;
    project_on(&Design::new(batch), targets, family, lambda, config)
}

/// Objective value and gradient of the smooth part for the Bernoulli
/// projection. `beta` is ordered like `batch.features()`.
pub fn bernoulli_objective(
    batch: &PerturbationBatch,
    probs: &[f64],
    intercept: f64,
    beta: &[f64],
    lambda: f64,
) -> Result<f64> {
    let design = Design::new(batch);
    if probs.len() != batch.len() || beta.len() != design.p() {
        return Err(Error::ShapeMismatch("targets or coefficients do not match the batch".into()));
    }
    let probs = probs.iter().map(|&p| clamp_probability(p)).collect::<Result<Vec<_>>>()?;
    Ok(bernoulli_objective_on(&design, &probs, intercept, beta, lambda))
}

/// Gradient of `Σ w_i KL(p_i ‖ sigmoid(η_i))` with respect to `(β₀, β)`.
pub fn bernoulli_gradient(
    batch: &PerturbationBatch,
    probs: &[f64],
    intercept: f64,
    beta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let design = Design::new(batch);
    if probs.len() != batch.len() || beta.len() != design.p() {
        return Err(Error::ShapeMismatch("targets or coefficients do not match the batch".into()));
    }
    let eta = design.linear_predictor(intercept, beta);
    let resid: Vec<f64> = eta
        .iter()
        .zip(probs)
        .zip(design.weights)
        .map(|((&e, &p), &w)| w * (sigmoid(e) - clamp_probability(p).unwrap_or(p)))
        .collect();
    let g0 = resid.iter().sum();
    let g = (0..design.p()).map(|k| design.col(k).iter().zip(&resid).map(|(x, r)| x * r).sum()).collect();
    Ok((g0, g))
}

fn fit_path_on(
    design: &Design,
    targets: &[Predictive],
    family: Family,
    grid: &[f64],
    config: &SolverConfig,
) -> Result<Vec<ExplanationModel>> {
    let means = targets_of(targets, family)?;
    let lmax = lambda_max_on(design, &means);
    let quad = match family {
        Family::Gaussian => {
            let wy: Vec<f64> = means.iter().zip(design.weights).map(|(t, w)| t * w).collect();
            Some(Quadratic::build(design, design.weights, &wy))
        }
        Family::Bernoulli => None,
    };
    let mut models = Vec::with_capacity(grid.len());
    let mut warm: Option<(f64, Vec<f64>)> = None;
    for &lambda in grid {
        let fit = if lambda >= lmax {
            null_fit(design, &means, family)
        } else {
            match (&quad, family) {
                (Some(q), Family::Gaussian) => fit_gaussian(q, lambda, warm.as_ref().map(|w| w.1.as_slice()), config),
                _ => fit_bernoulli(design, &means, lambda, warm.as_ref().map(|(b0, b)| (*b0, b.as_slice())), config),
            }
        };
        warm = Some((fit.intercept, fit.beta.clone()));
        models.push(finish(design, targets, family, lambda, fit)?);
    }
    Ok(models)
}

/// Regularization path for one posterior draw, fit in decreasing-λ order
/// with warm starts.
pub fn fit_path(
    batch: &PerturbationBatch,
    targets: &[Predictive],
    config: &SolverConfig,
) -> Result<Vec<ExplanationModel>> {
    config.validate()?;
    check_batch(batch, targets)?;
    let family = targets[0].family();
    let design = Design::new(batch);
    let means = targets_of(targets, family)?;
    let grid = config.resolve_grid(lambda_max_on(&design, &means));
    fit_path_on(&design, targets, family, &grid, config)
}

/// Projected explanation paths for every posterior draw on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionEnsemble {
    pub family: Family,
    pub dim: usize,
    pub lambda_grid: Vec<f64>,
    /// `L × K`
    pub per_sample_paths: Vec<Vec<ExplanationModel>>,
    /// `K × d`, posterior mean of the coefficients (absent = 0).
    pub mean_coefficients: Vec<Vec<f64>>,
    /// `K × d`, population variance over posterior draws.
    pub var_coefficients: Vec<Vec<f64>>,
    /// `K`, mean number of non-zero coefficients.
    pub mean_complexity: Vec<f64>,
}

impl ProjectionEnsemble {
    pub fn num_samples(&self) -> usize {
        self.per_sample_paths.len()
    }

    /// Dense coefficient map of draw `l` at grid index `k`.
    pub fn sample_map(&self, l: usize, k: usize) -> Vec<f64> {
        let mut map = vec![0.0; self.dim];
        for (&j, &b) in &self.per_sample_paths[l][k].coefficients {
            map[j] = b;
        }
        map
    }

    /// `(1/L) Σ_l kl_loss[l][k]`
    pub fn mean_loss(&self, k: usize) -> f64 {
        let total: f64 = self.per_sample_paths.iter().map(|path| path[k].kl_loss).sum();
        total / self.num_samples() as f64
    }

    pub fn all_converged(&self) -> bool {
        self.per_sample_paths.iter().flatten().all(|m| m.converged)
    }
}

/// Fits a path per posterior draw (in parallel, combined by draw index) on
/// the grid anchored at the pooled `λ_max = max_l λ_max(l)`.
pub fn project_ensemble(
    batch: &PerturbationBatch,
    preds: &PredictionMatrix,
    config: &SolverConfig,
) -> Result<ProjectionEnsemble> {
    config.validate()?;
    if preds.num_points() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "predictions cover {} points, batch has {}",
            preds.num_points(),
            batch.len()
        )));
    }
    let family = preds.family();
    let design = Design::new(batch);
    let num_samples = preds.num_samples();

    let pooled = (0..num_samples)
        .map(|l| targets_of(preds.row(l), family).map(|m| lambda_max_on(&design, &m)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let grid = config.resolve_grid(pooled);

    let paths = (0..num_samples)
        .into_par_iter()
        .map(|l| fit_path_on(&design, preds.row(l), family, &grid, config))
        .collect::<Result<Vec<_>>>()?;

    let d = batch.dim();
    let k_len = grid.len();
    let mut mean = vec![vec![0.0; d]; k_len];
    let mut var = vec![vec![0.0; d]; k_len];
    let mut complexity = vec![0.0; k_len];
    let inv_l = 1.0 / num_samples as f64;
    for k in 0..k_len {
        for path in &paths {
            for (&j, &b) in &path[k].coefficients {
                mean[k][j] += b;
            }
            complexity[k] += path[k].nnz() as f64;
        }
        for m in mean[k].iter_mut() {
            *m *= inv_l;
        }
        complexity[k] *= inv_l;
        for path in &paths {
            for j in 0..d {
                let diff = path[k].coefficient(j) - mean[k][j];
                var[k][j] += diff * diff;
            }
        }
        for v in var[k].iter_mut() {
            *v *= inv_l;
        }
    }

    Ok(ProjectionEnsemble {
        family,
        dim: d,
        lambda_grid: grid,
        per_sample_paths: paths,
        mean_coefficients: mean,
        var_coefficients: var,
        mean_complexity: complexity,
    })
}

/// Intercept-only projections and the null information loss `δ[M ‖ M₀]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullFit {
    pub models: Vec<ExplanationModel>,
    pub delta_0: f64,
}

pub fn fit_null(batch: &PerturbationBatch, preds: &PredictionMatrix) -> Result<NullFit> {
    if preds.num_points() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "predictions cover {} points, batch has {}",
            preds.num_points(),
            batch.len()
        )));
    }
    let family = preds.family();
    let design = Design::new(batch);
    let mut models = Vec::with_capacity(preds.num_samples());
    let mut null_values = Vec::with_capacity(preds.num_samples() * batch.len());
    for l in 0..preds.num_samples() {
        let targets = preds.row(l);
        let means = targets_of(targets, family)?;
        let fit = null_fit(&design, &means, family);
        let model = finish(&design, targets, family, f64::INFINITY, fit)?;
        null_values.extend((0..batch.len()).map(|i| model.predictive(batch.rep_row(i))));
        models.push(model);
    }
    let null_preds = PredictionMatrix::new(family, preds.num_samples(), batch.len(), null_values)?;
    let delta_0 = information_loss(preds, &null_preds, batch.weights())?;
    Ok(NullFit { models, delta_0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub lambda: f64,
    pub mean_complexity: f64,
    pub relative_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    /// Ordered by decreasing λ.
    pub points: Vec<PowerPoint>,
    pub selected_index: Option<usize>,
    pub target_power: Option<f64>,
    pub target_attained: Option<bool>,
}

/// Relative explanatory power at every grid point, with the information
/// loss averaged over posterior draws.
pub fn power_curve(ensemble: &ProjectionEnsemble, delta_0: f64) -> Result<PowerCurve> {
    let points = (0..ensemble.lambda_grid.len())
        .map(|k| {
            Ok(PowerPoint {
                lambda: ensemble.lambda_grid[k],
                mean_complexity: ensemble.mean_complexity[k],
                relative_power: crate::divergence::relative_power(ensemble.mean_loss(k), delta_0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerCurve { points, selected_index: None, target_power: None, target_attained: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    /// `false` when no grid point reaches the target; `index` is then the most powerful point.
    pub attained: bool,
}

/// Sparsest grid point whose power reaches `target_power`; ties go to the
/// larger λ.
pub fn select_complexity(curve: &PowerCurve, target_power: f64) -> Result<Selection> {
    if curve.points.is_empty() {
        return Err(Error::InvalidArgument("power curve is empty".into()));
    }
    if !(target_power <= 1.0) {
        return Err(Error::InvalidArgument(format!("target power must be <= 1, got {target_power}")));
    }
    let mut best: Option<usize> = None;
    for (k, pt) in curve.points.iter().enumerate() {
        if pt.relative_power >= target_power
            && best.is_none_or(|b| pt.mean_complexity < curve.points[b].mean_complexity)
        {
            best = Some(k);
        }
    }
    if let Some(index) = best {
        return Ok(Selection { index, attained: true });
    }
    let mut index = 0;
    for (k, pt) in curve.points.iter().enumerate() {
        if pt.relative_power > curve.points[index].relative_power {
            index = k;
        }
    }
    Ok(Selection { index, attained: false })
}

impl PowerCurve {
    pub fn with_selection(mut self, target_power: f64) -> Result<(Self, Selection)> {
        let sel = select_complexity(&self, target_power)?;
        self.selected_index = Some(sel.index);
        self.target_power = Some(target_power);
        self.target_attained = Some(sel.attained);
        Ok((self, sel))
    }
}
