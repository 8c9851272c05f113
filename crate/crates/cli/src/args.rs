use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "beamopt",
    version,
    about = "Max-min SINR downlink beamforming under per-antenna power limits"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Global {
    /// Base seed; instance `i` draws from its own stream of this seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Per-antenna power over noise power, in dB.
    #[arg(
        long = "snr-db",
        global = true,
        default_value_t = 10.0,
        allow_negative_numbers = true
    )]
    pub snr_db: f64,
    /// Users.
    #[arg(long, global = true, default_value_t = 4)]
    pub k: usize,
    /// Transmit antennas.
    #[arg(long, global = true, default_value_t = 4)]
    pub nt: usize,
    /// Noise power.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub n0: f64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Draw Rayleigh channels and write them to channels.csv.
    GenChannels {
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Solve each instance and write solve.csv, beamformers.csv and, where
    /// the method has one, duals.csv.
    Solve {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Weight file, required by the nn-* methods.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Certify the beamformers of a previous `solve` in the same output
    /// directory; writes certify.csv.
    Certify,
    /// Generate labeled records.
    GenDataset {
        /// Records written to <name>.ndj when no split is given.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Write <name>.train.ndj and <name>.test.ndj with TRAIN:TEST records.
        #[arg(long, num_args = 0..=1, default_missing_value = "20000:5000", value_parser = parse_split)]
        split: Option<(usize, usize)>,
        #[arg(long, default_value = "dataset")]
        name: String,
    },
    /// Zero-pad records into a k_max x nt_max container. Pads the records of
    /// --input, or generates --count mixed-size records when no input is given.
    Augment {
        #[arg(long)]
        kmax: usize,
        #[arg(long)]
        ntmax: usize,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value = "augmented")]
        name: String,
    },
    /// Mean min-SINR sweeps; writes eval_<sweep>.csv.
    Eval {
        #[arg(long, value_enum)]
        sweep: SweepArg,
        /// Sweep points; defaults depend on the sweep.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Adds a learned method to the comparison.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Stale-CSI BER simulation; writes stale.csv.
    SimulateStale {
        /// JSON scenario; the built-in dynamic scenario if omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Drives the learned arm with this network instead of the emulation.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Subgradient,
    Zf,
    Rzf,
    NnMu,
    NnLambdaMu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepArg {
    Power,
    Users,
    Sigma,
}

fn parse_split(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected TRAIN:TEST, got `{s}`"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}
