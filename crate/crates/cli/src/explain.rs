//! End-to-end explanation pipeline:
//! perturb → predict → null fit → projected paths → power curve → selection.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use projexp_core::models::{AdapterSession, BuiltinModel, BuiltinSource, ModelSpec, PredictiveSource, DEFAULT_TIMEOUT};
use projexp_core::perturb::{interpretable_rep, sample_perturbations};
use projexp_core::projection::{fit_null, power_curve, project_ensemble, ProjectionEnsemble};
use projexp_core::rng::derive_seed;
use projexp_core::{Instance, LocalityConfig, SolverConfig};

use crate::artifact::{ConvergenceReport, ExplanationArtifact, InstanceEcho, Metadata, ALIGNMENT_NOTE, ARTIFACT_VERSION};

/// Where predictions come from, as given to `--model`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelArg {
    /// `builtin:<file>`: a JSON [`ModelSpec`].
    Builtin(String),
    /// `adapter-cmd:<argv>`: whitespace-separated command line.
    AdapterCmd(Vec<String>),
    /// `adapter-tcp:<host:port>`
    AdapterTcp(String),
}

impl FromStr for ModelArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(path) = s.strip_prefix("builtin:") {
            Ok(ModelArg::Builtin(path.to_string()))
        } else if let Some(cmd) = s.strip_prefix("adapter-cmd:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err("adapter-cmd needs a command".into());
            }
            Ok(ModelArg::AdapterCmd(argv))
        } else if let Some(addr) = s.strip_prefix("adapter-tcp:") {
            Ok(ModelArg::AdapterTcp(addr.to_string()))
        } else {
            Err(format!("unknown model source {s:?} (expected builtin:, adapter-cmd: or adapter-tcp:)"))
        }
    }
}

impl std::fmt::Display for ModelArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelArg::Builtin(p) => write!(f, "builtin:{p}"),
            ModelArg::AdapterCmd(argv) => write!(f, "adapter-cmd:{}", argv.join(" ")),
            ModelArg::AdapterTcp(a) => write!(f, "adapter-tcp:{a}"),
        }
    }
}

pub fn load_builtin(path: &Path) -> Result<BuiltinModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: ModelSpec = serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
    Ok(spec.build()?)
}

/// An opened prediction source plus the seed it samples the posterior with
/// (built-in models only).
pub struct OpenedSource {
    pub source: Box<dyn PredictiveSource>,
    pub posterior_seed: Option<u64>,
    pub description: String,
}

pub fn open_source(model: &ModelArg, num_posterior_samples: usize, root_seed: u64) -> Result<OpenedSource> {
    let description = model.to_string();
    Ok(match model {
        ModelArg::Builtin(path) => {
            let seed = derive_seed(root_seed, "posterior");
            let model = load_builtin(Path::new(path))?;
            OpenedSource {
                source: Box::new(BuiltinSource { model, num_samples: num_posterior_samples, seed }),
                posterior_seed: Some(seed),
                description,
            }
        }
        ModelArg::AdapterCmd(argv) => OpenedSource {
            source: Box::new(AdapterSession::spawn(argv, DEFAULT_TIMEOUT)?),
            posterior_seed: None,
            description,
        },
        ModelArg::AdapterTcp(addr) => OpenedSource {
            source: Box::new(AdapterSession::connect_tcp(addr, DEFAULT_TIMEOUT)?),
            posterior_seed: None,
            description,
        },
    })
}

#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub seed: u64,
    /// The sampling seed inside is replaced by one derived from `seed`.
    pub locality: LocalityConfig,
    pub solver: SolverConfig,
    pub target_power: f64,
    /// Keep per-draw coefficient maps in the artifact.
    pub full: bool,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            locality: LocalityConfig::default(),
            solver: SolverConfig::default(),
            target_power: 0.8,
            full: false,
        }
    }
}

pub struct Explanation {
    pub artifact: ExplanationArtifact,
    pub ensemble: ProjectionEnsemble,
    /// Whether some grid point reached the target power.
    pub attained: bool,
}

pub fn explain(
    instance: &Instance,
    source: &mut dyn PredictiveSource,
    model_description: &str,
    posterior_seed: Option<u64>,
    opts: &ExplainOptions,
) -> Result<Explanation> {
    let perturb_seed = derive_seed(opts.seed, "perturb");
    let locality = LocalityConfig { seed: perturb_seed, ..opts.locality.clone() };
    let rep = interpretable_rep(instance);
    let batch = sample_perturbations(instance, &rep, &locality)?;

    let preds = source.predict(&batch.original_rows()).context("querying the model")?;
    if preds.num_points() != batch.len() {
        bail!("model returned {} predictions for {} inputs", preds.num_points(), batch.len());
    }

    let null = fit_null(&batch, &preds)?;
    if null.delta_0 < projexp_core::divergence::MIN_NULL_LOSS {
        return Err(projexp_core::Error::UndefinedPower { delta_0: null.delta_0 }.into());
    }
    let ensemble = project_ensemble(&batch, &preds, &opts.solver)?;
    let (curve, selection) = power_curve(&ensemble, null.delta_0)?.with_selection(opts.target_power)?;

    let num_samples = ensemble.num_samples();
    let k_len = ensemble.lambda_grid.len();
    let mut not_converged = Vec::new();
    let mut saturated = Vec::new();
    for (l, path) in ensemble.per_sample_paths.iter().enumerate() {
        for (k, m) in path.iter().enumerate() {
            if !m.converged {
                not_converged.push((l, k));
            }
            if m.saturated {
                saturated.push((l, k));
            }
        }
    }
    let mean_intercept = (0..k_len)
        .map(|k| ensemble.per_sample_paths.iter().map(|p| p[k].intercept).sum::<f64>() / num_samples as f64)
        .collect();
    let per_sample_kl_loss = ensemble.per_sample_paths.iter().map(|p| p.iter().map(|m| m.kl_loss).collect()).collect();
    let per_sample_coefficients = opts
        .full
        .then(|| (0..num_samples).map(|l| (0..k_len).map(|k| ensemble.sample_map(l, k)).collect()).collect());

    let artifact = ExplanationArtifact {
        version: ARTIFACT_VERSION,
        metadata: Metadata {
            seed: opts.seed,
            perturb_seed,
            posterior_seed,
            model: model_description.to_string(),
            family: preds.family(),
            num_perturbations: batch.len(),
            num_posterior_samples: num_samples,
            beta_a: locality.beta_a,
            beta_b: locality.beta_b,
            rho_fixed: locality.rho_fixed,
            representation: locality.representation,
            solver: opts.solver.clone(),
            lambda_grid: ensemble.lambda_grid.clone(),
            convergence: ConvergenceReport { all_converged: not_converged.is_empty(), not_converged, saturated },
            alignment: ALIGNMENT_NOTE.to_string(),
        },
        instance: InstanceEcho {
            dim: instance.dim(),
            shape: instance.shape(),
            background: instance.background(),
            features: instance.features().to_vec(),
            active_positions: rep.positions(),
        },
        delta_0: null.delta_0,
        curve,
        mean_coefficients: ensemble.mean_coefficients.clone(),
        var_coefficients: ensemble.var_coefficients.clone(),
        mean_intercept,
        per_sample_kl_loss,
        per_sample_coefficients,
    };
    artifact.check()?;
    Ok(Explanation { artifact, ensemble, attained: selection.attained })
}
