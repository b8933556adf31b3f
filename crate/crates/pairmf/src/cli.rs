//! Command-line arguments. Every command's arguments are also its config
//! echo in the run manifest, so they derive serde as well as clap.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::format::DriveDto;

#[derive(Debug, Parser)]
#[command(name = "pairmf", version, about = "Rates and pair correlations of linear Galves-Löcherbach networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Solve the Fredholm system of a driven pair, optionally over a 2-D sweep.
    PairSolve(PairArgs),
    /// Closed-form solution of an undriven pair, optionally over a 2-D sweep.
    PairExact(PairArgs),
    /// Replica-mean-field rates of a network.
    Rmf(RmfArgs),
    /// Exact event-driven simulation of a network or of a finite replica network.
    Simulate(SimulateArgs),
    /// Simulation, first-order RMF and pair RMF on the same network, aligned.
    Compare(CompareArgs),
    /// Write a generated network to a JSON file.
    ExportNetwork(ExportArgs),
    /// Re-execute the command recorded in a run manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::PairSolve(_) => "pair-solve",
            Command::PairExact(_) => "pair-exact",
            Command::Rmf(_) => "rmf",
            Command::Simulate(_) => "simulate",
            Command::Compare(_) => "compare",
            Command::ExportNetwork(_) => "export-network",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long, env = "PAIRMF_OUT", default_value = ".")]
    pub out: PathBuf,
    /// File stem of the outputs; defaults to the command name.
    #[arg(long)]
    pub name: Option<String>,
    /// Worker threads for sweep points and seeds (0: one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PairArgs {
    /// Pair problem JSON file. Replaces the parameter flags.
    #[arg(long, conflicts_with_all = ["fig2", "fig3a", "fig3b", "fig3c"])]
    pub config: Option<PathBuf>,
    /// Undriven pair, b = r = 1, sweep of (mu12, mu21) over (0, 10].
    #[arg(long, conflicts_with_all = ["fig3a", "fig3b", "fig3c"])]
    pub fig2: bool,
    /// Non-interacting pair under private and shared drive.
    #[arg(long, conflicts_with_all = ["fig3b", "fig3c"])]
    pub fig3a: bool,
    /// Pair with one-way interaction (mu12 = 1) under private and shared drive.
    #[arg(long, conflicts_with = "fig3c")]
    pub fig3b: bool,
    /// Pair with symmetric interaction (mu = 1) under private and shared drive.
    #[arg(long)]
    pub fig3c: bool,
    #[arg(long, default_value_t = 1.0)]
    pub b1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r2: f64,
    /// Jump of neuron 1 when neuron 2 spikes.
    #[arg(long, default_value_t = 0.0)]
    pub mu12: f64,
    /// Jump of neuron 2 when neuron 1 spikes.
    #[arg(long, default_value_t = 0.0)]
    pub mu21: f64,
    /// External Poisson stream `BETA:MU1:MU2`, repeatable.
    #[arg(long = "drive", value_parser = parse_drive)]
    pub drive: Vec<DriveDto>,
    /// Grid size `NxM`. Sweeps (mu12, mu21) unless drive axes are given.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Sweep range `LO:HI`; axis values are LO + (HI - LO) k / N, k = 1..N.
    #[arg(long)]
    pub range: Option<String>,
    /// Drive streams (1-based, comma separated) whose rate is the x value.
    #[arg(long, value_delimiter = ',')]
    pub x_drives: Vec<usize>,
    /// Drive streams (1-based, comma separated) whose rate is the y value.
    #[arg(long, value_delimiter = ',')]
    pub y_drives: Vec<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Discretization of the pair solver.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GridArgs {
    /// Quadrature nodes per e-fold of the fastest kernel decay.
    #[arg(long, default_value_t = 8.0)]
    pub ppe: f64,
    /// Fredholm iteration tolerance.
    #[arg(long, default_value_t = 1e-12)]
    pub pair_tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    pub pair_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NetworkArgs {
    /// Network JSON file.
    #[arg(long, conflicts_with_all = ["tree", "ring"])]
    pub network: Option<PathBuf>,
    /// Binary feedforward tree with this many levels below the root.
    #[arg(long, conflicts_with = "ring")]
    pub tree: Option<usize>,
    /// Homogeneous ring of this many neurons.
    #[arg(long)]
    pub ring: Option<usize>,
    /// Ring weight.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Ring reset (and base rate).
    #[arg(long = "r", default_value_t = 1.0)]
    pub reset: f64,
    /// Lower bound of the tree weights.
    #[arg(long, default_value_t = 0.0)]
    pub lo: f64,
    /// Upper bound of the tree weights.
    #[arg(long, default_value_t = 10.0)]
    pub hi: f64,
    /// Seed of the tree weights, and first simulation seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RmfMode {
    First,
    Pair,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    /// Self-consistency tolerance on rates.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = SweepOrder::GaussSeidel)]
    pub sweep_order: SweepOrder,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RmfArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long, value_enum, default_value_t = RmfMode::Pair)]
    pub mode: RmfMode,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicaArg {
    Original,
    First,
    Pair,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleArg {
    Time,
    Event,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimArgs {
    /// Length of the measurement window.
    #[arg(long, default_value_t = 1e5)]
    pub t_measure: f64,
    /// Discarded burn-in; defaults to a tenth of the measurement window.
    #[arg(long)]
    pub t_warmup: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub batches: usize,
    /// First simulation seed; defaults to --seed.
    #[arg(long)]
    pub sim_seed: Option<u64>,
    /// Number of independent runs, with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Pairs to measure, e.g. `1-2,3-4`. Defaults to the partition pairs,
    /// else every connected pair.
    #[arg(long)]
    pub pairs: Option<String>,
    #[arg(long, value_enum, default_value_t = SampleArg::Time)]
    pub sample: SampleArg,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long, value_enum, default_value_t = ReplicaArg::Original)]
    pub replica: ReplicaArg,
    /// Number of replicas.
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Also write every spike of the measurement window.
    #[arg(long)]
    pub spikes: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Destination file.
    #[arg(long, short = 'o')]
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Output directory of the re-run; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_drive(s: &str) -> Result<DriveDto, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [beta, mu_1, mu_2] = parts[..] else {
        return Err(format!("expected BETA:MU1:MU2, got `{s}`"));
    };
    let f = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok(DriveDto { beta: f(beta)?, mu_1: f(mu_1)?, mu_2: f(mu_2)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn arguments_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn drive_flag() {
        assert_eq!(parse_drive("2:1:0.5").unwrap(), DriveDto { beta: 2.0, mu_1: 1.0, mu_2: 0.5 });
        assert!(parse_drive("2:1").is_err());
        assert!(parse_drive("a:1:1").is_err());
    }

    #[test]
    fn commands_round_trip_through_json() {
        let cli = Cli::try_parse_from(["pairmf", "compare", "--ring", "5", "--mu", "2", "--t-measure", "100"]).unwrap();
        let json = serde_json::to_string(&cli.command).unwrap();
        assert!(json.starts_with(r#"{"command":"compare""#));
        let back: Command = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cli.command);
    }
}
