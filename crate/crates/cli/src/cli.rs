//! Argument parsing and command dispatch for the `projexp` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use projexp_core::projection::LambdaGrid;
use projexp_core::{LocalityConfig, Representation, SolverConfig};

use crate::artifact::ExplanationArtifact;
use crate::demo::{run_demo, DemoOptions};
use crate::explain::{explain, open_source, ExplainOptions, Explanation, ModelArg};
use crate::instance_io::read_instance;
use crate::render::{power_curve_tsv, render_map, GridPoint, MapKind};

/// Exit code when the target power was not reached on the grid.
pub const EXIT_NOT_ATTAINED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "projexp", version, args_override_self = true, about = "Local explanations of probabilistic models by KL projection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explain one instance and write a JSON artifact.
    Explain(ExplainArgs),
    /// Print the power curve as TSV, from an artifact or a fresh run.
    PowerCurve(PowerCurveArgs),
    /// Render a coefficient map from an artifact as a PGM image.
    Render(RenderArgs),
    /// Run the synthetic two-class digit demonstration.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Instance file: one-line CSV or ASCII PGM (P2).
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// builtin:<file>, adapter-cmd:<argv> or adapter-tcp:<host:port>.
    #[arg(long)]
    pub model: Option<ModelArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub num_perturbations: usize,
    /// Posterior draws requested from built-in models.
    #[arg(long, default_value_t = 100)]
    pub num_posterior_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta_a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta_b: f64,
    /// Fix the zeroing probability instead of drawing it from the beta distribution.
    #[arg(long)]
    pub rho_fixed: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub num_lambdas: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_min_ratio: f64,
    #[arg(long, default_value_t = 0.8)]
    pub target_power: f64,
    #[arg(long, default_value_t = 0.0)]
    pub background: f64,
    #[arg(long, value_enum, default_value_t = RepresentationArg::BinaryPresence)]
    pub representation: RepresentationArg,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Store per-sample coefficient maps in the artifact.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RepresentationArg {
    BinaryPresence,
    Identity,
}

impl From<RepresentationArg> for Representation {
    fn from(r: RepresentationArg) -> Self {
        match r {
            RepresentationArg::BinaryPresence => Representation::BinaryPresence,
            RepresentationArg::Identity => Representation::Identity,
        }
    }
}

impl RunArgs {
    pub fn options(&self) -> ExplainOptions {
        ExplainOptions {
            seed: self.seed,
            locality: LocalityConfig {
                beta_a: self.beta_a,
                beta_b: self.beta_b,
                num_samples: self.num_perturbations,
                seed: 0,
                rho_fixed: self.rho_fixed,
                representation: self.representation.into(),
            },
            solver: SolverConfig {
                lambda_grid: LambdaGrid::Auto { num_lambdas: self.num_lambdas, min_ratio: self.lambda_min_ratio },
                max_iters: self.max_iters,
                tol: self.tol,
                ..SolverConfig::default()
            },
            target_power: self.target_power,
            full: self.full,
        }
    }

    pub fn run(&self) -> Result<Explanation> {
        let Some(instance_path) = &self.instance else { bail!("--instance is required") };
        let Some(model) = &self.model else { bail!("--model is required") };
        if !(0.0..=1.0).contains(&self.target_power) {
            bail!("--target-power must lie in [0, 1], got {}", self.target_power);
        }
        let instance = read_instance(instance_path, self.background)?;
        let mut opened = open_source(model, self.num_posterior_samples, self.seed)?;
        explain(&instance, opened.source.as_mut(), &opened.description, opened.posterior_seed, &self.options())
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Artifact output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PowerCurveArgs {
    /// Read the curve from this artifact instead of running an explanation.
    #[arg(long, conflicts_with_all = ["instance", "model"])]
    pub artifact: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
    /// TSV output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// mean, variance or sample:<l>
    #[arg(long, default_value = "mean")]
    pub what: MapKind,
    /// selected or lambda-index:<k>
    #[arg(long, default_value = "selected")]
    pub at: GridPoint,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub num_perturbations: usize,
    #[arg(long, default_value_t = 50)]
    pub num_posterior_samples: usize,
    #[arg(long, default_value_t = 50)]
    pub num_lambdas: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_min_ratio: f64,
    #[arg(long, default_value_t = 0.8)]
    pub target_power: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn attained_code(attained: bool, target: f64) -> u8 {
    if attained {
        0
    } else {
        eprintln!("warning: target power {target} not attained on the lambda grid");
        EXIT_NOT_ATTAINED
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Explain(args) => {
            let result = args.run.run()?;
            result.artifact.save(&args.out)?;
            Ok(attained_code(result.attained, args.run.target_power))
        }
        Command::PowerCurve(args) => {
            let (artifact, code) = match &args.artifact {
                Some(path) => (ExplanationArtifact::load(path)?, 0),
                None => {
                    let result = args.run.run()?;
                    (result.artifact, attained_code(result.attained, args.run.target_power))
                }
            };
            let tsv = power_curve_tsv(&artifact);
            match &args.out {
                Some(path) => write_file(path, &tsv)?,
                None => print!("{tsv}"),
            }
            Ok(code)
        }
        Command::Render(args) => {
            let artifact = ExplanationArtifact::load(&args.artifact)?;
            write_file(&args.out, &render_map(&artifact, args.what, args.at)?)?;
            Ok(0)
        }
        Command::Demo(args) => {
            let defaults = DemoOptions::default();
            let mut explain = defaults.explain.clone();
            explain.locality.num_samples = args.num_perturbations;
            explain.solver.lambda_grid =
                LambdaGrid::Auto { num_lambdas: args.num_lambdas, min_ratio: args.lambda_min_ratio };
            explain.target_power = args.target_power;
            let opts = DemoOptions { seed: args.seed, num_posterior_samples: args.num_posterior_samples, explain };
            let summary = run_demo(&args.out, &opts)?;
            println!("test accuracy {:.3}", summary.test_accuracy);
            for case in &summary.cases {
                println!(
                    "{}: test image {} (label {}), selected power {:.4} at mean complexity {:.2}, densest power {:.4}",
                    case.name,
                    case.test_index,
                    case.label,
                    case.selected_power,
                    case.selected_complexity,
                    case.densest_power
                );
            }
            if let Some(note) = &summary.note {
                println!("{note}");
            }
            let attained = summary.cases.iter().all(|c| c.target_attained);
            Ok(attained_code(attained, args.target_power))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_explain_flags() {
        let cli = Cli::try_parse_from([
            "projexp",
            "explain",
            "--instance",
            "x.csv",
            "--model",
            "builtin:m.json",
            "--representation",
            "identity",
            "--rho-fixed",
            "0.3",
            "--out",
            "a.json",
        ])
        .unwrap();
        let Command::Explain(args) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(args.run.model, Some(ModelArg::Builtin("m.json".into())));
        let opts = args.run.options();
        assert_eq!(opts.locality.representation, Representation::Identity);
        assert_eq!(opts.locality.rho_fixed, Some(0.3));
        assert_eq!(opts.locality.num_samples, 1000);
        assert_eq!(opts.target_power, 0.8);
    }

    #[test]
    fn power_curve_artifact_conflicts_with_model() {
        let r = Cli::try_parse_from(["projexp", "power-curve", "--artifact", "a.json", "--model", "builtin:m.json"]);
        assert!(r.is_err());
    }
}
