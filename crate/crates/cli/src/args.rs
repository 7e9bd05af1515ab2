use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "critpoint", version, about = "Critical points of isotropic Gaussian random fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Output {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, env = "CRITPOINT_THREADS")]
    pub threads: Option<usize>,
    /// Also evaluate an independent method and report the gap.
    #[arg(long)]
    pub cross_check: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Densities q_N^k(ℓ) of the ordered GOE eigenvalues on a grid.
    GoeDensity {
        #[arg(long = "N")]
        n: usize,
        /// Eigenvalue rank 1..=N (all ranks when omitted).
        #[arg(long)]
        k: Option<usize>,
        /// start:stop:step
        #[arg(long, default_value = "-6:6:0.05", allow_hyphen_values = true)]
        grid: String,
        #[command(flatten)]
        out: Output,
    },
    /// Monte Carlo draws of ordered GOE eigenvalues.
    GoeSample {
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: Output,
    },
    /// Expected numbers of critical points per index.
    Counts {
        #[arg(long, default_value = "gaussian")]
        model: String,
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        k: Option<usize>,
        /// Count only critical values above this level.
        #[arg(long, allow_hyphen_values = true)]
        u: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        volume: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Index fractions E N_k / E N.
    Fractions {
        #[arg(long = "N")]
        n: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Small-separation asymptotic laws of the correlation function.
    CorrAsymptote {
        #[arg(long, default_value = "gaussian")]
        model: String,
        #[arg(long = "N")]
        n: usize,
        /// start:stop:count:log|lin, or a single value
        #[arg(long)]
        rho: String,
        #[command(flatten)]
        out: Output,
    },
    /// Monte Carlo estimates of the correlation function.
    CorrMc {
        #[arg(long, default_value = "gaussian")]
        model: String,
        #[arg(long = "N")]
        n: usize,
        /// start:stop:count:log|lin, or a single value
        #[arg(long)]
        rho: String,
        /// Restrict to one index pair, as i1,i2.
        #[arg(long)]
        index_pair: Option<String>,
        /// Report every index pair.
        #[arg(long, conflicts_with = "index_pair")]
        all_pairs: bool,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: Output,
    },
    /// Synthesise fields, detect critical points and estimate statistics.
    Simulate {
        #[arg(long, default_value = "gaussian")]
        model: String,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 256)]
        side: usize,
        #[arg(long, default_value_t = 0.1)]
        spacing: f64,
        #[arg(long, default_value_t = 4)]
        realizations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the first realisation as a grid snapshot.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Pair-correlation bins, start:stop:count:lin|log.
        #[arg(long)]
        pair_bins: Option<String>,
        /// Restrict the pair correlation to one index pair, as i1,i2.
        #[arg(long)]
        index_pair: Option<String>,
        /// Emit one row per critical point instead of per realisation.
        #[arg(long)]
        records: bool,
        #[command(flatten)]
        out: Output,
    },
    /// Run the acceptance suite.
    Validate {
        #[arg(long, default_value = "quick")]
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        out: Output,
    },
}

impl Command {
    pub fn output(&self) -> &Output {
        match self {
            Command::GoeDensity { out, .. }
            | Command::GoeSample { out, .. }
            | Command::Counts { out, .. }
            | Command::Fractions { out, .. }
            | Command::CorrAsymptote { out, .. }
            | Command::CorrMc { out, .. }
            | Command::Simulate { out, .. }
            | Command::Validate { out, .. } => out,
        }
    }
}
