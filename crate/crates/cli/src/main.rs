//! `logcl` command-line interface.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Temporal knowledge graph extrapolation with local-global contrast.
#[derive(Debug, Parser)]
#[command(name = "logcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a dataset and cache a normalized copy with statistics.
    Prepare {
        /// Raw dataset directory with stat.txt, train.txt, valid.txt and test.txt.
        #[arg(long, required_unless_present = "synthetic")]
        dataset: Option<PathBuf>,
        /// Generate a built-in dataset instead (`repetition`).
        #[arg(long, conflicts_with = "dataset")]
        synthetic: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration and report test metrics.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Gaussian noise added to the initial entity embeddings.
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Keep updating on each test timestamp after scoring it.
        #[arg(long)]
        online: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the variant grid: full, -G, -L, w/o-eatt, w/o-cl.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train LogCL and its w/o-cl variant per seed and evaluate under embedding noise.
    NoiseSweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = logcl::experiment::SIGMA_GRID)]
        sigmas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
    },
    /// Merge the result tables of several runs.
    Report {
        /// Manifest files or run directories.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Dataset, output directory and configuration. Precedence, lowest first:
/// defaults, `--preset`, `--config` file, `--set`, dedicated flags.
#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-dataset defaults (ICEWS14, ICEWS18, ICEWS05-15, GDELT).
    #[arg(long)]
    preset: Option<String>,
    /// Any config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    no_cl: bool,
    #[arg(long)]
    no_eatt: bool,
    #[arg(long, conflicts_with = "global_only")]
    local_only: bool,
    #[arg(long)]
    global_only: bool,
    #[arg(long)]
    online: bool,
}

/// Errors in how the tool was invoked, as opposed to failures while running.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
