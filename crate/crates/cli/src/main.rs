//! `rgmdt` binary: stagewise driver for the distillation pipeline.
//!
//! One subcommand per pipeline stage, file-based artifacts throughout. Every
//! run writes a `manifest.json` into the output directory first (resolved
//! config with every default echoed, sha256 of each input, toolkit version,
//! seed), then dispatches. Exit codes: 0 success, 2 validation error, 3
//! certification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

use manifest::Failure;

/// Distill tabular RL oracles into small oblique decision-tree policies and
/// certify the return gap.
#[derive(Parser)]
#[command(name = "rgmdt", version, propagate_version = true)]
pub struct Cli {
    /// Directory all artifacts are written into (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for parallel stages; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Base RNG seed; falls back to $RGMDT_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Print progress details to stderr.
    #[arg(long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Solve (or Q-learn) a tabular critic for a maze task.
    TrainOracle {
        /// Maze spec JSON file, or a named preset: simple-4x4, medium-8x8,
        /// hard-10x10, toy-2x2:N, predator-prey-4x4:N.
        #[arg(long)]
        maze: String,
        #[arg(long, value_enum, default_value_t = OracleMode::Exact)]
        mode: OracleMode,
        /// Q-learning episodes (qlearn mode only).
        #[arg(long, default_value_t = 3000)]
        episodes: usize,
        /// Output critic file, relative to --out-dir.
        #[arg(long)]
        out: String,
    },

    /// Export one agent's action-value vectors as CSV, with a row-aligned
    /// `<out>.weights.csv` visitation sidecar.
    DumpQvec {
        #[arg(long)]
        critic: PathBuf,
        #[arg(long, default_value_t = 0)]
        agent: usize,
        /// Output CSV file, relative to --out-dir.
        #[arg(long)]
        out: String,
    },

    /// Cluster vectors from a dump-qvec CSV under the chosen metric.
    Cluster {
        /// Vector CSV produced by dump-qvec.
        #[arg(long)]
        qvec: PathBuf,
        /// Row-aligned weights CSV; uniform weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Number of cluster labels (at least 2).
        #[arg(long)]
        labels: usize,
        #[command(flatten)]
        hyper: ClusterArgs,
        /// Output cluster-model JSON, relative to --out-dir.
        #[arg(long)]
        out: String,
    },

    /// Extract a single-agent decision-tree policy from a critic.
    Extract {
        #[arg(long)]
        critic: PathBuf,
        /// Leaf budget L (at least 2).
        #[arg(long)]
        leaves: usize,
        #[command(flatten)]
        grow: GrowArgs,
        /// Output tree JSON, relative to --out-dir.
        #[arg(long)]
        out: String,
    },

    /// Extract one tree per agent by iterative joint growth; writes
    /// `tree_agent<j>.json` per agent plus the `schedule.json` audit record
    /// into --out-dir.
    ExtractMulti {
        #[arg(long)]
        critic: PathBuf,
        /// Optional maze spec to cross-check against the critic's.
        #[arg(long)]
        maze: Option<PathBuf>,
        /// Leaf budget L per agent (at least 2).
        #[arg(long)]
        leaves: usize,
        /// Growth iterations; defaults to saturation.
        #[arg(long)]
        iterations: Option<usize>,
        /// Freeze vectors and visitation to the oracle's greedy policy (the
        /// unconditioned ablation).
        #[arg(long)]
        unconditioned: bool,
        /// Agent visit order per iteration.
        #[arg(long, value_enum, default_value_t = AgentOrderArg::Ascending)]
        agent_order: AgentOrderArg,
        #[command(flatten)]
        grow: GrowArgs,
    },

    /// Render a tree JSON as Graphviz DOT.
    ExportDot {
        /// Tree JSON produced by extract or extract-multi.
        tree: PathBuf,
        /// Output DOT file, relative to --out-dir; defaults to the tree's
        /// file stem with a .dot extension.
        #[arg(long)]
        out: Option<String>,
    },

    /// Evaluate a joint tree policy against its critic and write the full
    /// return-gap report (informational; never exits 3).
    Evaluate {
        #[arg(long)]
        critic: PathBuf,
        /// Tree JSON files, one per agent in agent order.
        #[arg(long, value_delimiter = ',', required = true)]
        trees: Vec<PathBuf>,
        /// Growth schedule JSON (adds stage-wise epsilons to the report).
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Sampled episodic advisory mode instead of exact evaluation.
        #[arg(long)]
        advisory: bool,
        /// Rollout episodes in advisory mode.
        #[arg(long, default_value_t = 2048)]
        episodes: usize,
        /// Output report JSON, relative to --out-dir.
        #[arg(long, default_value = "report.json")]
        out: String,
    },

    /// Certify the return-gap bound; exits 3 when the bound does not hold.
    Certify {
        #[arg(long)]
        critic: PathBuf,
        /// Tree JSON files, one per agent in agent order.
        #[arg(long, value_delimiter = ',', required = true)]
        trees: Vec<PathBuf>,
        /// Growth schedule JSON (adds stage-wise epsilons to the report).
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Output certificate JSON, relative to --out-dir.
        #[arg(long, default_value = "certify.json")]
        out: String,
    },

    /// Sweep methods and leaf budgets across seeds; writes the aggregate CSV
    /// to --out plus a per-cell `<out stem>_cells.csv`.
    Sweep {
        #[arg(long)]
        critic: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Rgmdt, MethodArg::Cart])]
        methods: Vec<MethodArg>,
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16])]
        leaves: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[command(flatten)]
        grow: GrowArgs,
        #[arg(long, default_value = "sweep.csv")]
        out: String,
    },

    /// Cross clustering metrics with label-noise levels; writes the row CSV
    /// to --out plus a per-(metric, noise) `<out stem>_summary.csv` and
    /// prints the mean-reward ordering.
    Ablate {
        #[arg(long)]
        critic: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MetricArg::Cosine, MetricArg::Euclidean, MetricArg::Manhattan])]
        metrics: Vec<MetricArg>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0f64])]
        noise: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        /// Leaf budget used for every ablation cell.
        #[arg(long, default_value_t = 4)]
        leaves: usize,
        #[command(flatten)]
        grow: GrowArgs,
        #[arg(long, default_value = "ablation.csv")]
        out: String,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainOracle { .. } => "train-oracle",
            Command::DumpQvec { .. } => "dump-qvec",
            Command::Cluster { .. } => "cluster",
            Command::Extract { .. } => "extract",
            Command::ExtractMulti { .. } => "extract-multi",
            Command::ExportDot { .. } => "export-dot",
            Command::Evaluate { .. } => "evaluate",
            Command::Certify { .. } => "certify",
            Command::Sweep { .. } => "sweep",
            Command::Ablate { .. } => "ablate",
        }
    }
}

/// Clustering hyperparameters (defaults mirror the library's).
#[derive(Args, Clone, Copy)]
pub struct ClusterArgs {
    /// Clustering metric; epsilon is always reported under cosine.
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
    /// Softmax temperature of the soft assignment.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Weight of the mutual-information regularizer.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_rim: f64,
    /// Neighbors per vector in the locality term.
    #[arg(long, default_value_t = 5)]
    pub k3: usize,
    /// Alternating-minimization iteration cap per restart.
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Relative objective improvement below which a restart stops.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Deterministic restarts; the lowest-epsilon model wins.
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
}

/// Tree-growth hyperparameters: clustering plus SVM splits.
#[derive(Args, Clone, Copy)]
pub struct GrowArgs {
    #[command(flatten)]
    pub cluster: ClusterArgs,
    /// SVM box constraint C.
    #[arg(long, default_value_t = 10.0)]
    pub svm_c: f64,
    /// SVM KKT stop tolerance.
    #[arg(long, default_value_t = 1e-9)]
    pub svm_tol: f64,
    /// Refit clusters per node, or carve one global clustering.
    #[arg(long, value_enum, default_value_t = GrowthModeArg::PerNode)]
    pub growth_mode: GrowthModeArg,
}

/// clap needs `Display` for `default_value_t`; render the kebab-case name.
macro_rules! display_as_value_enum {
    ($($ty:ty),+) => {$(
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                self.to_possible_value()
                    .expect("no skipped variants")
                    .get_name()
                    .fmt(f)
            }
        }
    )+};
}

display_as_value_enum!(OracleMode, MetricArg, MethodArg, GrowthModeArg, AgentOrderArg);

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
pub enum OracleMode {
    Exact,
    Qlearn,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
pub enum MetricArg {
    Cosine,
    Euclidean,
    Manhattan,
}

impl From<MetricArg> for rgmdt::cluster::Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => rgmdt::cluster::Metric::Cosine,
            MetricArg::Euclidean => rgmdt::cluster::Metric::Euclidean,
            MetricArg::Manhattan => rgmdt::cluster::Metric::Manhattan,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
pub enum MethodArg {
    Rgmdt,
    Cart,
}

impl From<MethodArg> for rgmdt::evalx::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rgmdt => rgmdt::evalx::Method::Rgmdt,
            MethodArg::Cart => rgmdt::evalx::Method::Cart,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
pub enum GrowthModeArg {
    PerNode,
    Global,
}

impl From<GrowthModeArg> for rgmdt::svmtree::GrowthMode {
    fn from(m: GrowthModeArg) -> Self {
        match m {
            GrowthModeArg::PerNode => rgmdt::svmtree::GrowthMode::PerNode,
            GrowthModeArg::Global => rgmdt::svmtree::GrowthMode::Global,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug)]
pub enum AgentOrderArg {
    Ascending,
    Shuffle,
}

impl From<AgentOrderArg> for rgmdt::multiagent::AgentOrder {
    fn from(o: AgentOrderArg) -> Self {
        match o {
            AgentOrderArg::Ascending => rgmdt::multiagent::AgentOrder::Ascending,
            AgentOrderArg::Shuffle => rgmdt::multiagent::AgentOrder::Shuffle,
        }
    }
}

fn exit_code(failure: &Failure) -> u8 {
    match failure {
        Failure::Validation(_) => 2,
        Failure::Uncertified(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(exit_code(&failure))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_kinds_map_to_documented_exit_codes() {
        assert_eq!(exit_code(&Failure::Validation("bad flag".into())), 2);
        assert_eq!(exit_code(&Failure::Uncertified("gap exceeds bound".into())), 3);
    }

    #[test]
    fn argument_grammar_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
