//! Self-contained explanation artifact (JSON).

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use projexp_core::{Family, PowerCurve, Representation, SolverConfig};
use serde::{Deserialize, Serialize};

pub const ARTIFACT_VERSION: u32 = 1;

/// How coefficient maps of different posterior draws are aligned for the
/// mean/variance aggregates.
pub const ALIGNMENT_NOTE: &str =
    "posterior draws are aligned by shared lambda-grid index; the grid is anchored at the pooled lambda_max";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub all_converged: bool,
    /// `(posterior draw, grid index)` pairs whose solver hit an iteration limit.
    pub not_converged: Vec<(usize, usize)>,
    /// `(posterior draw, grid index)` pairs with a coefficient at the separation cap.
    pub saturated: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub perturb_seed: u64,
    pub posterior_seed: Option<u64>,
    pub model: String,
    pub family: Family,
    pub num_perturbations: usize,
    pub num_posterior_samples: usize,
    pub beta_a: f64,
    pub beta_b: f64,
    pub rho_fixed: Option<f64>,
    pub representation: Representation,
    pub solver: SolverConfig,
    pub lambda_grid: Vec<f64>,
    pub convergence: ConvergenceReport,
    pub alignment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEcho {
    pub dim: usize,
    pub shape: Option<(usize, usize)>,
    pub background: f64,
    pub features: Vec<f64>,
    pub active_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationArtifact {
    pub version: u32,
    pub metadata: Metadata,
    pub instance: InstanceEcho,
    /// Null-model information loss `δ[M ‖ M₀]`.
    pub delta_0: f64,
    pub curve: PowerCurve,
    /// `K × d`
    pub mean_coefficients: Vec<Vec<f64>>,
    /// `K × d`
    pub var_coefficients: Vec<Vec<f64>>,
    /// `K`, posterior mean of the explanation intercept.
    pub mean_intercept: Vec<f64>,
    /// `L × K`
    pub per_sample_kl_loss: Vec<Vec<f64>>,
    /// `L × K × d`, present when the run asked for full output.
    pub per_sample_coefficients: Option<Vec<Vec<Vec<f64>>>>,
}

impl ExplanationArtifact {
    pub fn num_lambdas(&self) -> usize {
        self.curve.points.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self).context("serializing artifact")?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let artifact: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        artifact.check()?;
        Ok(artifact)
    }

    /// Dimension consistency across all stored arrays.
    pub fn check(&self) -> Result<()> {
        let k = self.num_lambdas();
        let d = self.instance.dim;
        let ok_kd = |m: &Vec<Vec<f64>>| m.len() == k && m.iter().all(|r| r.len() == d);
        anyhow::ensure!(self.instance.features.len() == d, "instance echo has the wrong length");
        anyhow::ensure!(self.metadata.lambda_grid.len() == k, "lambda grid does not match the curve");
        anyhow::ensure!(ok_kd(&self.mean_coefficients), "mean coefficient maps are not K x d");
        anyhow::ensure!(ok_kd(&self.var_coefficients), "variance maps are not K x d");
        anyhow::ensure!(self.mean_intercept.len() == k, "mean intercepts are not length K");
        anyhow::ensure!(
            self.per_sample_kl_loss.len() == self.metadata.num_posterior_samples
                && self.per_sample_kl_loss.iter().all(|r| r.len() == k),
            "per-sample losses are not L x K"
        );
        if let Some(maps) = &self.per_sample_coefficients {
            anyhow::ensure!(
                maps.len() == self.metadata.num_posterior_samples && maps.iter().all(ok_kd),
                "per-sample maps are not L x K x d"
            );
        }
        if let Some((rows, cols)) = self.instance.shape {
            anyhow::ensure!(rows * cols == d, "shape does not cover the instance");
        }
        Ok(())
    }
}
