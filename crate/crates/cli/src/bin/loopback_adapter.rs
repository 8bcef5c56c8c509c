//! Adapter that serves a built-in model, so the subprocess path can be
//! compared against the in-process one.

use std::io::{stdin, stdout, BufReader, BufWriter};
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use projexp_cli::explain::load_builtin;
use projexp_core::models::{serve, BuiltinSource};
use projexp_core::rng::derive_seed;

#[derive(Parser)]
struct Args {
    /// JSON model specification.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    num_posterior_samples: usize,
    /// Root seed; the posterior stream is derived from it as in `projexp explain`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Serve one TCP connection on this address instead of stdio.
    #[arg(long)]
    listen: Option<String>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let model = load_builtin(&args.model)?;
    let mut source =
        BuiltinSource { model, num_samples: args.num_posterior_samples, seed: derive_seed(args.seed, "posterior") };
    match args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(&addr)?;
            println!("{}", listener.local_addr()?);
            let (stream, _) = listener.accept()?;
            let reader = BufReader::new(stream.try_clone()?);
            serve(&mut source, reader, BufWriter::new(stream))?;
        }
        None => serve(&mut source, stdin().lock(), BufWriter::new(stdout().lock()))?,
    }
    Ok(())
}
