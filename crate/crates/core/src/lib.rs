//! Local explanations of probabilistic black-box predictions.
//!
//! An explained model exposes its predictive distribution `p(y | z, θ)` for a
//! set of posterior draws `θ⁽ˡ⁾`. Around one input we sample a locality of
//! background-masked perturbations ([`perturb`]), query the model, and project
//! each posterior draw onto an L1-penalized generalized linear model over the
//! interpretable representation by minimizing the locality-averaged
//! Kullback–Leibler divergence ([`projection`]). The loss of the projection
//! relative to an intercept-only null model gives a relative explanatory power
//! ([`divergence`]) that trades fidelity against sparsity along the lasso path.
//!
//! [`models`] provides the predictive sources: conjugate Bayesian linear
//! regression, Laplace-approximated Bayesian logistic regression, and a
//! line-delimited JSON adapter for external models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergence;
pub mod error;
pub mod models;
pub mod perturb;
pub mod projection;
pub mod rng;

pub use divergence::{Family, PredictionMatrix, Predictive};
pub use error::{Error, Result};
pub use perturb::{Instance, InterpretableRep, LocalityConfig, PerturbationBatch, Representation};
pub use projection::{ExplanationModel, PowerCurve, ProjectionEnsemble, SolverConfig};
