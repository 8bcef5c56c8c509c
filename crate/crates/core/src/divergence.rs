//! KL divergences between predictive distributions, information loss, and
//! relative explanatory power. All quantities are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS_P, 1 - EPS_P]` before any logarithm.
pub const EPS_P: f64 = 1e-12;
/// Lower bound applied to every variance.
pub const MIN_VARIANCE: f64 = 1e-12;
/// `relative_power` refuses null losses below this.
pub const MIN_NULL_LOSS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bernoulli,
    Gaussian,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Bernoulli => f.write_str("bernoulli"),
            Family::Gaussian => f.write_str("gaussian"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Family::Bernoulli),
            "gaussian" => Ok(Family::Gaussian),
            other => Err(Error::InvalidArgument(format!("unknown family {other:?}"))),
        }
    }
}

/// One predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Predictive {
    Bernoulli { p: f64 },
    Gaussian { mu: f64, sigma2: f64 },
}

impl Predictive {
    /// Clamped Bernoulli. Fails outside `[0, 1]`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        Ok(Predictive::Bernoulli { p: clamp_probability(p)? })
    }

    /// Gaussian with variance floored at [`MIN_VARIANCE`]. Fails on a
    /// non-finite mean or a non-positive variance.
    pub fn gaussian(mu: f64, sigma2: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Domain(format!("gaussian mean must be finite, got {mu}")));
        }
        Ok(Predictive::Gaussian { mu, sigma2: floor_variance(sigma2)? })
    }

    pub fn family(&self) -> Family {
        match self {
            Predictive::Bernoulli { .. } => Family::Bernoulli,
            Predictive::Gaussian { .. } => Family::Gaussian,
        }
    }

    /// `p` for Bernoulli, `mu` for Gaussian.
    pub fn mean(&self) -> f64 {
        match *self {
            Predictive::Bernoulli { p } => p,
            Predictive::Gaussian { mu, .. } => mu,
        }
    }
}

pub fn clamp_probability(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability must lie in [0, 1], got {p}")));
    }
    Ok(p.clamp(EPS_P, 1.0 - EPS_P))
}

fn floor_variance(sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("variance must be positive and finite, got {sigma2}")));
    }
    Ok(sigma2.max(MIN_VARIANCE))
}

/// `KL(Bern(p) ‖ Bern(q))`.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64> {
    let p = clamp_probability(p)?;
    let q = clamp_probability(q)?;
    Ok(kl_bernoulli_unchecked(p, q))
}

pub(crate) fn kl_bernoulli_unchecked(p: f64, q: f64) -> f64 {
    let kl = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    kl.max(0.0)
}

/// `KL(N(mu1, s1) ‖ N(mu2, s2))`.
pub fn kl_gaussian(mu1: f64, sigma2_1: f64, mu2: f64, sigma2_2: f64) -> Result<f64> {
    let s1 = floor_variance(sigma2_1)?;
    let s2 = floor_variance(sigma2_2)?;
    if !mu1.is_finite() || !mu2.is_finite() {
        return Err(Error::Domain("gaussian means must be finite".into()));
    }
    Ok(kl_gaussian_unchecked(mu1, s1, mu2, s2))
}

pub(crate) fn kl_gaussian_unchecked(mu1: f64, s1: f64, mu2: f64, s2: f64) -> f64 {
    let diff = mu1 - mu2;
    let kl = 0.5 * ((s2 / s1).ln() + (s1 + diff * diff) / s2 - 1.0);
    kl.max(0.0)
}

/// KL between two predictive distributions of the same family.
pub fn kl(full: &Predictive, expl: &Predictive) -> Result<f64> {
    match (*full, *expl) {
        (Predictive::Bernoulli { p }, Predictive::Bernoulli { p: q }) => Ok(kl_bernoulli_unchecked(p, q)),
        (Predictive::Gaussian { mu: m1, sigma2: s1 }, Predictive::Gaussian { mu: m2, sigma2: s2 }) => {
            Ok(kl_gaussian_unchecked(m1, s1, m2, s2))
        }
        (a, b) => Err(Error::FamilyMismatch { expected: a.family().to_string(), found: b.family().to_string() }),
    }
}

/// `L × N` predictive distributions: row `l` is posterior draw `l`, column
/// `i` is locality point `i`. `L = 1` encodes a point-estimate model.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    family: Family,
    num_samples: usize,
    num_points: usize,
    values: Vec<Predictive>,
}

impl PredictionMatrix {
    pub fn new(family: Family, num_samples: usize, num_points: usize, values: Vec<Predictive>) -> Result<Self> {
        if num_samples == 0 || num_points == 0 {
            return Err(Error::InvalidArgument("prediction matrix must have L >= 1 and N >= 1".into()));
        }
        if values.len() != num_samples * num_points {
            return Err(Error::ShapeMismatch(format!(
                "expected {} predictions for L={num_samples}, N={num_points}, got {}",
                num_samples * num_points,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| v.family() != family) {
            return Err(Error::FamilyMismatch { expected: family.to_string(), found: v.family().to_string() });
        }
        Ok(Self { family, num_samples, num_points, values })
    }

    /// Bernoulli matrix from raw probabilities (row-major), clamped.
    pub fn from_probabilities(num_samples: usize, num_points: usize, probs: &[f64]) -> Result<Self> {
        let values = probs.iter().map(|&p| Predictive::bernoulli(p)).collect::<Result<Vec<_>>>()?;
        Self::new(Family::Bernoulli, num_samples, num_points, values)
    }

    /// Gaussian matrix from raw means and variances (row-major).
    pub fn from_gaussian(num_samples: usize, num_points: usize, mu: &[f64], sigma2: &[f64]) -> Result<Self> {
        if mu.len() != sigma2.len() {
            return Err(Error::ShapeMismatch("means and variances differ in length".into()));
        }
        let values =
            mu.iter().zip(sigma2).map(|(&m, &s)| Predictive::gaussian(m, s)).collect::<Result<Vec<_>>>()?;
        Self::new(Family::Gaussian, num_samples, num_points, values)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn row(&self, l: usize) -> &[Predictive] {
        &self.values[l * self.num_points..(l + 1) * self.num_points]
    }

    pub fn get(&self, l: usize, i: usize) -> Predictive {
        self.values[l * self.num_points + i]
    }

    pub fn values(&self) -> &[Predictive] {
        &self.values
    }
}

/// Weighted KL of one row of explanation predictions from one row of full-model predictions.
pub fn weighted_row_loss(full: &[Predictive], expl: &[Predictive], weights: &[f64]) -> Result<f64> {
    if full.len() != expl.len() || full.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "row lengths differ: full {}, explanation {}, weights {}",
            full.len(),
            expl.len(),
            weights.len()
        )));
    }
    let mut total = 0.0;
    for ((f, e), w) in full.iter().zip(expl).zip(weights) {
        total += w * kl(f, e)?;
    }
    Ok(total)
}

/// `δ = (1/L) Σ_l Σ_i w_i KL(full[l][i] ‖ expl[l][i])`.
pub fn information_loss(full: &PredictionMatrix, expl: &PredictionMatrix, weights: &[f64]) -> Result<f64> {
    if full.family != expl.family {
        return Err(Error::FamilyMismatch { expected: full.family.to_string(), found: expl.family.to_string() });
    }
    if full.num_samples != expl.num_samples || full.num_points != expl.num_points {
        return Err(Error::ShapeMismatch(format!(
            "full model is {}x{}, explanation is {}x{}",
            full.num_samples, full.num_points, expl.num_samples, expl.num_points
        )));
    }
    let mut total = 0.0;
    for l in 0..full.num_samples {
        total += weighted_row_loss(full.row(l), expl.row(l), weights)?;
    }
    Ok(total / full.num_samples as f64)
}

/// Relative explanatory power `1 − δ_s / δ_0`.
pub fn relative_power(delta_s: f64, delta_0: f64) -> Result<f64> {
    if !(delta_0 >= MIN_NULL_LOSS) {
        return Err(Error::UndefinedPower { delta_0 });
    }
    if !(delta_s >= 0.0) || !delta_s.is_finite() {
        return Err(Error::Domain(format!("information loss must be finite and non-negative, got {delta_s}")));
    }
    Ok(1.0 - delta_s / delta_0)
}
