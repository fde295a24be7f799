use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "mfld", version, about = "Gradient complexity, mean-field and localization toolkit")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "MFLD_THREADS")]
    pub threads: Option<usize>,

    /// Write the primary output here instead of stdout. The run manifest goes
    /// next to it as <out>.manifest.json.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Explicit manifest path (defaults to stderr when --out is absent).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Monte-Carlo gradient complexity of a function on the cube.
    Complexity(ComplexityArgs),
    /// Naive mean-field variational problem and the rate function.
    #[command(subcommand)]
    Meanfield(MeanfieldCommand),
    /// Exact optimal transport on the cube.
    #[command(subcommand)]
    Transport(TransportCommand),
    /// Large-deviation bounds and exact tails.
    #[command(subcommand)]
    Ld(LdCommand),
    /// Tilt-mixture decomposition by stopped localization paths.
    Localize(LocalizeArgs),
    /// Gaussian mixtures: reverse log-Sobolev, tilts, Föllmer process.
    #[command(subcommand)]
    Gaussian(GaussianCommand),
    /// Exponential random graphs.
    #[command(subcommand)]
    Ergm(ErgmCommand),
    /// Run the invariant suite for one module or all of them.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Dense function table JSON {n, values, kind}.
    Table,
    /// Ising JSON {A, b}.
    Ising,
    /// Subgraph-count model JSON {N, terms}.
    Subgraph,
    /// Triangle count T(G)/N on N vertices (no file).
    Triangle,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Vertex count for --model triangle.
    #[arg(long = "N")]
    pub n_vertices: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ComplexityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    /// Take the sup over this many sampled vertices (lower estimate).
    #[arg(long)]
    pub subsample: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanfieldCommand {
    /// sup over products of ∫f dξ − KL(ξ‖μ_p).
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Rate function φ_p(t) at one level or over a grid (CSV).
    Phi {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, conflicts_with = "t_grid", required_unless_present = "t_grid")]
        t: Option<f64>,
        /// start:step:stop, inclusive.
        #[arg(long)]
        t_grid: Option<String>,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportCommand {
    /// Exact W1 between two measures on the cube.
    W1 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Write the optimal plan as CSV (src, dst, mass, hamming).
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LdCommand {
    /// Both sides of the large-deviation bound from supplied φ values.
    Bound {
        /// φ_p(t − δ).
        #[arg(long)]
        phi: f64,
        /// φ_p(t), used by the lower bound.
        #[arg(long)]
        phi_t: f64,
        #[arg(long)]
        lip: f64,
        #[arg(long)]
        complexity: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Exact log P(f ≥ tn) under μ_p for a dense table.
    Tail {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        t: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopArg {
    TEps,
    Tau,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalizeArgs {
    /// Measure table JSON (kind log_density or function).
    #[arg(long)]
    pub measure: PathBuf,
    #[arg(long, default_value_t = 1.0 / 32.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long)]
    pub paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 50.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 10)]
    pub check_every: usize,
    #[arg(long, value_enum, default_value_t = StopArg::TEps)]
    pub stop: StopArg,
    /// Monte-Carlo samples for the width in the τ threshold.
    #[arg(long, default_value_t = 20_000)]
    pub gw_samples: usize,
    #[arg(long)]
    pub seed: u64,
    /// Write per-state traces of the first --trace-paths paths as CSV.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub trace_paths: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianCommand {
    /// Reverse log-Sobolev check I ≤ 2D + M for a Gaussian mixture.
    Lsi {
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long, default_value_t = mfld_core::gaussian::DEFAULT_NODES)]
        nodes: usize,
        #[arg(long, default_value_t = 20_000)]
        gw_samples: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Tilt search on a ball of radius r.
    Tilt {
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 401)]
        grid: usize,
    },
    /// Föllmer process simulation.
    Follmer {
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        paths: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
        check_times: Vec<f64>,
        #[arg(long, default_value_t = 81)]
        nodes: usize,
        #[arg(long, default_value_t = 20_000)]
        gw_samples: usize,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgmCommand {
    /// Decompose an exponential random graph into near-product pieces.
    Decompose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        paths: usize,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// "all" or a module name.
    pub target: String,
    #[arg(long)]
    pub seed: u64,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Complexity(_) => "complexity",
            Command::Meanfield(MeanfieldCommand::Solve { .. }) => "meanfield solve",
            Command::Meanfield(MeanfieldCommand::Phi { .. }) => "meanfield phi",
            Command::Transport(TransportCommand::W1 { .. }) => "transport w1",
            Command::Ld(LdCommand::Bound { .. }) => "ld bound",
            Command::Ld(LdCommand::Tail { .. }) => "ld tail",
            Command::Localize(_) => "localize",
            Command::Gaussian(GaussianCommand::Lsi { .. }) => "gaussian lsi",
            Command::Gaussian(GaussianCommand::Tilt { .. }) => "gaussian tilt",
            Command::Gaussian(GaussianCommand::Follmer { .. }) => "gaussian follmer",
            Command::Ergm(ErgmCommand::Decompose { .. }) => "ergm decompose",
            Command::Verify(_) => "verify",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Complexity(a) => Some(a.seed),
            Command::Meanfield(MeanfieldCommand::Solve { solver, .. } | MeanfieldCommand::Phi { solver, .. }) => {
                Some(solver.seed)
            }
            Command::Localize(a) => Some(a.seed),
            Command::Gaussian(GaussianCommand::Lsi { seed, .. } | GaussianCommand::Follmer { seed, .. }) => Some(*seed),
            Command::Ergm(ErgmCommand::Decompose { seed, .. }) => Some(*seed),
            Command::Verify(a) => Some(a.seed),
            _ => None,
        }
    }
}
