mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::CliError;

/// Identification and estimation for systems of convolution equations.
///
/// Exit codes: 0 success, 2 configuration or input error, 3 numerical
/// failure. Errors are also written to stderr as a JSON object.
#[derive(Parser, Debug)]
#[command(name = "convid", version)]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// JSON file whose keys override the command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic sample; writes CSV plus a JSON sidecar holding the truth.
    Simulate(SimulateArgs),
    /// Estimate the latent function from a sample; writes a solution directory.
    Estimate(EstimateArgs),
    /// Repeat simulate + estimate over consecutive seeds.
    Montecarlo(MonteCarloArgs),
    /// Check membership of a function in a tail class.
    Diagnose(DiagnoseArgs),
    /// Tabulate the Gaussian-pair ill-posedness example.
    IllposedDemo(DemoArgs),
}

/// Data-generating process.
#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct SimOpts {
    /// example1 (classical errors), example2 (Berkson regression), example3 (panel).
    #[arg(long, default_value = "example1")]
    pub model: String,
    /// Sample size.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Law of the latent variable, e.g. gauss:1:0.25 or mix:0.5:-1:0.5:1:0.5.
    #[arg(long, default_value = "gauss:1:0.25")]
    pub g: String,
    /// Law of the measurement error u.
    #[arg(long, default_value = "laplace:0:1")]
    pub f: String,
    /// Mean-zero noise added to x.
    #[arg(long, default_value = "none")]
    pub ux: String,
    /// Regression function for example2: linear:a:b, quadratic:a:b:c, step:t.
    #[arg(long, default_value = "quadratic:0:0:1")]
    pub regression: String,
    /// Law of z for example2.
    #[arg(long, default_value = "gauss:0:1")]
    pub z_law: String,
    /// Mean-zero outcome noise for example2.
    #[arg(long, default_value = "none")]
    pub uy: String,
}

/// Estimator settings.
#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct EstOpts {
    /// Spatial output grid lo:hi:n (comma-separated per axis); the frequency
    /// grid is its dual.
    #[arg(long, default_value = "-32:32:1024")]
    pub grid: String,
    /// a, b or auto.
    #[arg(long, default_value = "auto")]
    pub case: String,
    /// Support threshold; with --reg, the floor on |ε₁|.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Regularization weight C:profile (profile bump or raised_cosine), or off.
    #[arg(long)]
    pub reg: Option<String>,
    /// Kernel bandwidth for example2 (default: Silverman's rule).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// density (clip and renormalise) or signed.
    #[arg(long)]
    pub cleanup: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimOpts,
    /// Output CSV; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct EstimateArgs {
    /// Sample CSV.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Model of the sample (default: from the sidecar, else example1).
    #[arg(long)]
    pub model: Option<String>,
    #[command(flatten)]
    pub est: EstOpts,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub sim: SimOpts,
    #[command(flatten)]
    pub est: EstOpts,
    /// Number of trials; trial r uses seed + r.
    #[arg(long, default_value_t = 20)]
    pub trials: u64,
    /// Output directory (trials.csv, summary.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct DiagnoseArgs {
    /// Grid function header (JSON) to test.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Test the characteristic function of this law instead, in closed form.
    #[arg(long)]
    pub family: Option<String>,
    /// Class m:V:B:Lambda (2-d: m1,m2:V:B:l11,l12,l22).
    #[arg(long)]
    pub class: Option<String>,
    /// Frequency grid for the tail fit of --family.
    #[arg(long, default_value = "-8:8:1024")]
    pub grid: String,
    /// First radius of the doubling schedule.
    #[arg(long)]
    pub r0: Option<f64>,
    /// Output JSON (default: stdout only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 2)]
    pub n_min: u32,
    #[arg(long, default_value_t = 10)]
    pub n_max: u32,
    /// Output directory (illposed.csv, illposed.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let overrides = match &cli.config {
        Some(p) => Some(config::load_overrides(p)?),
        None => None,
    };
    if let Some(k) = cli.workers {
        if k == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ov = overrides.as_ref();
    match cli.command {
        Command::Simulate(a) => run::simulate(config::apply(a, ov)?),
        Command::Estimate(a) => run::estimate(config::apply(a, ov)?),
        Command::Montecarlo(a) => run::montecarlo(config::apply(a, ov)?),
        Command::Diagnose(a) => run::diagnose(config::apply(a, ov)?),
        Command::IllposedDemo(a) => run::illposed_demo(config::apply(a, ov)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code())
        }
    }
}
