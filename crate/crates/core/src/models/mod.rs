//! Sources of posterior predictive distributions.

mod adapter;
mod linear;
mod logistic;

pub use adapter::{serve, AdapterSession, Request, Response, DEFAULT_TIMEOUT, PROTOCOL_VERSION};
pub use linear::{fit_bayes_linear, predict_bayes_linear, BayesLinearPosterior, NoisePosterior};
pub use logistic::{
    fit_bayes_logistic, log_posterior_gradient, predict_bayes_logistic, BayesLogisticPosterior,
};

use serde::{Deserialize, Serialize};

use crate::divergence::{Family, PredictionMatrix, Predictive};
use crate::error::{Error, Result};

/// Anything that returns an `L × N` prediction matrix for `N` original-space inputs.
pub trait PredictiveSource {
    fn family(&self) -> Family;

    fn num_samples(&self) -> usize;

    fn predict(&mut self, inputs: &[Vec<f64>]) -> Result<PredictionMatrix>;
}

/// A fitted built-in model.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinModel {
    Linear(BayesLinearPosterior),
    Logistic(BayesLogisticPosterior),
}

impl BuiltinModel {
    pub fn family(&self) -> Family {
        match self {
            BuiltinModel::Linear(_) => Family::Gaussian,
            BuiltinModel::Logistic(_) => Family::Bernoulli,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BuiltinModel::Linear(p) => p.dim,
            BuiltinModel::Logistic(p) => p.dim,
        }
    }

    pub fn predict(&self, inputs: &[Vec<f64>], num_samples: usize, seed: u64) -> Result<PredictionMatrix> {
        match self {
            BuiltinModel::Linear(p) => predict_bayes_linear(p, inputs, num_samples, seed),
            BuiltinModel::Logistic(p) => predict_bayes_logistic(p, inputs, num_samples, seed),
        }
    }

    pub fn to_spec(&self) -> ModelSpec {
        match self {
            BuiltinModel::Linear(p) => ModelSpec::BayesLinear { posterior: p.clone() },
            BuiltinModel::Logistic(p) => ModelSpec::BayesLogistic { posterior: p.clone() },
        }
    }
}

/// On-disk description of a built-in model: either a fitted posterior or
/// training data to fit one from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    BayesLinear { posterior: BayesLinearPosterior },
    BayesLogistic { posterior: BayesLogisticPosterior },
    BayesLinearData { x: Vec<Vec<f64>>, y: Vec<f64>, alpha: f64, a0: f64, b0: f64 },
    BayesLogisticData { x: Vec<Vec<f64>>, y: Vec<f64>, alpha: f64 },
}

impl ModelSpec {
    pub fn build(self) -> Result<BuiltinModel> {
        match self {
            ModelSpec::BayesLinear { posterior } => {
                posterior.validate()?;
                Ok(BuiltinModel::Linear(posterior))
            }
            ModelSpec::BayesLogistic { posterior } => {
                posterior.validate()?;
                Ok(BuiltinModel::Logistic(posterior))
            }
            ModelSpec::BayesLinearData { x, y, alpha, a0, b0 } => {
                fit_bayes_linear(&x, &y, alpha, a0, b0).map(BuiltinModel::Linear)
            }
            ModelSpec::BayesLogisticData { x, y, alpha } => fit_bayes_logistic(&x, &y, alpha).map(BuiltinModel::Logistic),
        }
    }
}

/// A built-in model queried with a fixed posterior sample count and seed.
#[derive(Debug, Clone)]
pub struct BuiltinSource {
    pub model: BuiltinModel,
    pub num_samples: usize,
    pub seed: u64,
}

impl PredictiveSource for BuiltinSource {
    fn family(&self) -> Family {
        self.model.family()
    }

    fn num_samples(&self) -> usize {
        self.num_samples
    }

    fn predict(&mut self, inputs: &[Vec<f64>]) -> Result<PredictionMatrix> {
        self.model.predict(inputs, self.num_samples, self.seed)
    }
}

/// Returns the same distribution for every input and posterior draw.
#[derive(Debug, Clone)]
pub struct ConstantSource {
    pub value: Predictive,
    pub num_samples: usize,
}

impl PredictiveSource for ConstantSource {
    fn family(&self) -> Family {
        self.value.family()
    }

    fn num_samples(&self) -> usize {
        self.num_samples
    }

    fn predict(&mut self, inputs: &[Vec<f64>]) -> Result<PredictionMatrix> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("no inputs".into()));
        }
        PredictionMatrix::new(
            self.value.family(),
            self.num_samples,
            inputs.len(),
            vec![self.value; self.num_samples * inputs.len()],
        )
    }
}

pub(crate) fn check_rows(inputs: &[Vec<f64>], dim: usize) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no inputs".into()));
    }
    if let Some(i) = inputs.iter().position(|r| r.len() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "input {i} has {} values, model expects {dim}",
            inputs[i].len()
        )));
    }
    Ok(())
}
