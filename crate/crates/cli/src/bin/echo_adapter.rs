//! Adapter that returns the same predictive distribution for every input.

use std::io::{stdin, stdout, BufWriter};

use anyhow::{bail, Result};
use clap::Parser;
use projexp_core::models::{serve, ConstantSource};
use projexp_core::{Family, Predictive};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "bernoulli")]
    family: Family,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 10)]
    num_posterior_samples: usize,
}

fn main() -> Result<()> {
    let args = Args::parse();
    if args.num_posterior_samples == 0 {
        bail!("--num-posterior-samples must be positive");
    }
    let value = match args.family {
        Family::Bernoulli => Predictive::bernoulli(args.p)?,
        Family::Gaussian => Predictive::gaussian(args.mu, args.sigma2)?,
    };
    let mut source = ConstantSource { value, num_samples: args.num_posterior_samples };
    serve(&mut source, stdin().lock(), BufWriter::new(stdout().lock()))?;
    Ok(())
}
