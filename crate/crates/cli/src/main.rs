//! `paretonas`: budgeted architecture search, Pareto caches, federated
//! supernet simulation and deployment search from one binary.

mod commands;
mod output;
mod units;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use paretonas_core::LatencyMode;

#[derive(Debug, Parser)]
#[command(name = "paretonas", version, about, propagate_version = true)]
#[command(after_help = "Every output lands in --out together with <command>.manifest.json. \
See FORMATS.md for all file layouts.")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration, TOML (or JSON by extension). Defaults apply
    /// to anything left out.
    #[arg(long, global = true, env = "PARETONAS_CONFIG")]
    pub config: Option<PathBuf>,

    /// Master seed. Overrides every seed in the configuration.
    #[arg(long, global = true, env = "PARETONAS_SEED")]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, env = "PARETONAS_OUT", default_value = "out")]
    pub out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PARETONAS_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MACs and parameter extremes of the search space.
    #[command(
        after_help = "Writes bounds.json: {min_macs, max_macs, min_params, max_params, genome_len, space_size}."
    )]
    Bounds,

    /// Build the budget-indexed Pareto cache.
    #[command(after_help = "Writes cache.json and frontier.csv (budget,macs,params,fitness). \
Per-budget search times go to the manifest.")]
    GenCache {
        /// Number of budgets [config: cache.n_budgets].
        #[arg(long, env = "PARETONAS_N_BUDGETS")]
        n_budgets: Option<usize>,
        /// Lowest budget in MACs, e.g. 458.2M.
        #[arg(long, value_parser = units::parse_scaled)]
        min_budget: Option<f64>,
        /// Highest budget in MACs [default: space maximum].
        #[arg(long, value_parser = units::parse_scaled)]
        max_budget: Option<f64>,
    },

    /// Mean and standard deviation of cache fitness.
    #[command(after_help = "Writes cache_stats.json: {n, mean_fitness, std_fitness}.")]
    CacheStats {
        /// Cache file [default: <out>/cache.json].
        #[arg(long)]
        cache: Option<PathBuf>,
    },

    /// Cache statistics as a function of cache size.
    #[command(after_help = "Writes sensitivity.csv (n,mean,std), one row per cache size.")]
    Sensitivity {
        /// Comma-separated cache sizes [config: cache.sweep].
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },

    /// Path-guided federated supernet training on the simulation space.
    #[command(after_help = "Writes fedsim_trace.csv (round,beta,objective,loss_min_path,loss_max_path), \
supernet.bin (binary checkpoint) and, when no --cache is given, fedsim_cache.json.")]
    Fedsim {
        /// Curriculum cache built for the [fedsim] space and weights.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Communication rounds [config: fedsim.run.rounds].
        #[arg(long)]
        rounds: Option<usize>,
    },

    /// Draw latency samples from a synthetic device oracle.
    #[command(after_help = "Writes latency_samples.csv: d0..,e0..,w0.. (choice indices), latency_ms, device.")]
    LatGen {
        /// `cpu` or `gpu` [config: latency.profile].
        #[arg(long)]
        profile: Option<String>,
        /// Number of samples [config: latency.samples].
        #[arg(long)]
        samples: Option<usize>,
    },

    /// Fit the latency predictor on a sample file.
    #[command(after_help = "Writes lpm.bin (binary model), lpm_history.csv (epoch,train_loss) \
and lpm_report.json.")]
    LatTrain {
        /// Sample CSV [default: <out>/latency_samples.csv].
        #[arg(long)]
        samples: Option<PathBuf>,
    },

    /// Search one architecture for a deployment target.
    #[command(after_help = "Writes deploy.json and prints it: genome (indices and ratios), fitness report, \
objective, macs, params, predicted_latency_ms. Wall time goes to the manifest.")]
    DeploySearch(DeployArgs),

    /// Best of N rejection-sampled random architectures per budget.
    #[command(after_help = "Writes random_baseline.csv (budget,macs,params,fitness), one row per budget, \
directly comparable with frontier.csv.")]
    RandomBaseline {
        /// Feasible samples per budget.
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Number of budgets [config: cache.n_budgets].
        #[arg(long)]
        n_budgets: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct DeployArgs {
    /// MACs budget, e.g. 600M or 1.2G.
    #[arg(long, env = "PARETONAS_MACS", value_parser = units::parse_scaled)]
    pub macs: f64,
    /// Parameter budget, e.g. 20M.
    #[arg(long, env = "PARETONAS_PARAMS", value_parser = units::parse_scaled)]
    pub params: Option<f64>,
    /// Latency budget in milliseconds.
    #[arg(long, env = "PARETONAS_LATENCY", value_parser = units::parse_positive)]
    pub latency: Option<f64>,
    #[arg(long, env = "PARETONAS_LATENCY_MODE", default_value = "hard")]
    pub latency_mode: LatencyMode,
    /// Latency penalty per millisecond (soft mode only).
    #[arg(long, env = "PARETONAS_DELTA", default_value_t = 0.0)]
    pub delta: f64,
    /// Latency model from `lat-train`.
    #[arg(long, env = "PARETONAS_MODEL")]
    pub model: Option<PathBuf>,
    /// Require the latency model to carry this device tag.
    #[arg(long)]
    pub device: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
