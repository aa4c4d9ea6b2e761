//! Command-line front end: run experiment sweeps, generate synthetic data,
//! and evaluate the noise and error-bound calculators.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pride_core::analysis::{theorem2_bound, BoundInputs, Theorem2Bound};
use pride_core::experiment::{
    load_config, run_experiment, write_synthetic_csv, DatasetKind, Overrides,
};
use pride_core::privacy::noise_sigma;

#[derive(Parser)]
#[command(
    name = "pride",
    version,
    about = "Differentially private distributed estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment sweep described by a config file.
    Run(RunArgs),
    /// Write a synthetic confounded dataset to CSV.
    Generate(GenerateArgs),
    /// Evaluate the noise calibration formula.
    Sigma(SigmaArgs),
    /// Evaluate the approximation-error bound.
    Bound(BoundArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the sweep.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment config (TOML) whose [dataset.synthetic] table describes
    /// the dataset.
    #[arg(long)]
    config: PathBuf,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SigmaArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Column range bound of the released block.
    #[arg(long)]
    theta: f64,
    /// l2-sensitivity of the projection (1 for the SRHT).
    #[arg(long, default_value_t = 1.0)]
    w2: f64,
}

#[derive(Args)]
struct BoundArgs {
    /// Rank of the full design.
    #[arg(long)]
    rank: usize,
    /// Total random-feature dimension (parties - 1) * tau_subs.
    #[arg(long)]
    tau_k: usize,
    /// Largest per-party noise standard deviation.
    #[arg(long)]
    sigma: f64,
    /// Smallest non-zero singular value of the design.
    #[arg(long)]
    d_min: f64,
    #[arg(long)]
    beta_star_norm: f64,
    #[arg(long)]
    parties: usize,
    #[arg(long, default_value_t = 1.0)]
    c_const: f64,
    #[arg(long, default_value_t = 0.05)]
    xi: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> pride_core::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = load_config(&args.config)?;
            let overrides = Overrides {
                master_seed: args.seed,
                output_dir: args.out,
                jobs: args.jobs,
            };
            let artifacts = run_experiment(&config, &overrides)?;
            println!("detail:  {}", artifacts.detail_csv.display());
            println!("summary: {}", artifacts.summary_json.display());
            println!("timings: {}", artifacts.timings_csv.display());
            Ok(())
        }
        Command::Generate(args) => {
            let config = load_config(&args.config)?;
            if config.dataset.kind != DatasetKind::Synthetic {
                return Err(pride_core::PrideError::Config(
                    "generate needs dataset.kind = \"synthetic\"".to_string(),
                ));
            }
            let mut synth = config.dataset.synthetic;
            if let Some(seed) = args.seed {
                synth.seed = seed;
            }
            let path = write_synthetic_csv(&synth, &args.out)?;
            println!("dataset: {}", path.display());
            Ok(())
        }
        Command::Sigma(args) => {
            let sigma = noise_sigma(args.epsilon, args.delta, args.theta, args.w2)?;
            println!("sigma = {sigma}");
            Ok(())
        }
        Command::Bound(args) => {
            let inputs = BoundInputs {
                r: args.rank,
                tau_k: args.tau_k,
                sigma: args.sigma,
                d_min: args.d_min,
                beta_star_norm: args.beta_star_norm,
                parties: args.parties,
                c_const: args.c_const,
                xi: args.xi,
            };
            match theorem2_bound(&inputs)? {
                Theorem2Bound::Vacuous { rho } => {
                    println!("rho = {rho}");
                    println!("bound is vacuous (rho >= 1/2)");
                }
                Theorem2Bound::Bounded {
                    rho,
                    term_i,
                    term_ii,
                    total,
                } => {
                    println!("rho = {rho}");
                    println!("term_i = {term_i}");
                    println!("term_ii = {term_ii}");
                    println!("total = {total}");
                }
            }
            Ok(())
        }
    }
}
