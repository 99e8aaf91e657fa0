use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tiltroute::data::{NoiseKind, Scenario, SplitSpec};
use tiltroute::{DistanceMetric, ProximityPenalty, ReferenceKind, RouterConfig, RouterMode};

#[derive(Debug, Parser)]
#[command(name = "tiltroute", version, about = "Proximity-weighted routing of queries across a model pool")]
pub struct Cli {
    /// Worker threads for batch work; 1 runs everything sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with known true means.
    Synth(SynthArgs),
    /// Build a reference set from a corpus.
    Fit(FitArgs),
    /// Route encodings against a fitted reference set.
    Route(RouteArgs),
    /// Evaluate one router at fixed λ values.
    Evaluate(EvaluateArgs),
    /// Sweep λ for Base, Prox, AllSee and the baselines.
    Sweep(SweepArgs),
    /// Top-z Jaccard overlap between outlier and inlier task rankings.
    Jaccard(JaccardArgs),
    /// Time routing decisions and report reference-set memory.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Clusters,
    Points,
}

impl From<KindArg> for ReferenceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Clusters => ReferenceKind::Clusters,
            KindArg::Points => ReferenceKind::TrainingPoints,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Base,
    Prox,
}

impl From<ModeArg> for RouterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Base => RouterMode::Base,
            ModeArg::Prox => RouterMode::Prox,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PenaltyArg {
    Distance,
    SquaredDistance,
}

impl From<PenaltyArg> for ProximityPenalty {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::Distance => ProximityPenalty::Distance,
            PenaltyArg::SquaredDistance => ProximityPenalty::SquaredDistance,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    LeaveTaskOut,
    FewShotOutlier,
    AllSee,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::LeaveTaskOut => Scenario::LeaveTaskOut,
            ScenarioArg::FewShotOutlier => Scenario::FewShotOutlier,
            ScenarioArg::AllSee => Scenario::AllSee,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopulationArg {
    All,
    Inliers,
    Outliers,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    Gaussian,
    Bernoulli,
}

impl From<NoiseArg> for NoiseKind {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Gaussian => NoiseKind::Gaussian,
            NoiseArg::Bernoulli => NoiseKind::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// Seed for clustering, splits, generators and baselines.
    #[arg(long, env = "TILTROUTE_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct RouterArgs {
    #[arg(long, value_enum, default_value = "clusters")]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "prox")]
    pub mode: ModeArg,
    /// Number of KMeans clusters K.
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    /// Number of neighbors k.
    #[arg(long, default_value_t = 100)]
    pub neighbors: usize,
    /// 1/τ; 0 keeps the prior.
    #[arg(long, default_value_t = 20.0)]
    pub inv_tau: f64,
    #[arg(long, default_value = "cosine")]
    pub metric: DistanceMetric,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon_spread: f64,
    #[arg(long, value_enum, default_value = "distance")]
    pub penalty: PenaltyArg,
}

impl RouterArgs {
    pub fn config(&self) -> RouterConfig {
        RouterConfig {
            mode: self.mode.into(),
            reference_kind: self.kind.into(),
            clusters: self.clusters,
            neighbors: self.neighbors,
            inv_tau: self.inv_tau,
            metric: self.metric,
            epsilon_spread: self.epsilon_spread,
            penalty: self.penalty.into(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Split scenario; without it the whole corpus is used for training.
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Comma-separated held-out tasks.
    #[arg(long, value_delimiter = ',')]
    pub outlier_tasks: Vec<String>,
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 25)]
    pub few_shot_count: usize,
}

impl SplitArgs {
    pub fn spec(&self, scenario: Scenario, seed: u64) -> SplitSpec {
        SplitSpec {
            scenario,
            outlier_tasks: self.outlier_tasks.iter().cloned().collect(),
            inlier_train_fraction: self.train_fraction,
            few_shot_count: self.few_shot_count,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output corpus (`.bin` for the binary container, else JSON Lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the true per-task means as JSON.
    #[arg(long)]
    pub oracle_out: Option<PathBuf>,
    #[arg(long)]
    pub queries_per_task: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseArg>,
    #[arg(long)]
    pub cluster_separation: Option<f64>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Reference artifact (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub router: RouterArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub reference: PathBuf,
    /// Encodings, one per line: a JSON array or an object with
    /// `encoding` and optional `query_id`. Reads stdin when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output JSON Lines; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json` when `--out` is set.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "prox")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 20.0)]
    pub inv_tau: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon_spread: f64,
    #[arg(long, value_enum, default_value = "distance")]
    pub penalty: PenaltyArg,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub router: RouterArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub lambda: Vec<f64>,
    #[arg(long, value_enum, default_value = "all")]
    pub population: PopulationArg,
    /// Output JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub router: RouterArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Explicit comma-separated λ grid, ascending.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Vec<f64>,
    /// Log-spaced points over [1e-2, 1e4] (plus 0) when no grid is given.
    #[arg(long, default_value_t = 50)]
    pub grid_points: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub population: PopulationArg,
    /// Mode of the AllSee router.
    #[arg(long, value_enum, default_value = "base")]
    pub allsee_mode: ModeArg,
    /// Directory for curves.csv, summary.csv, sweep.json and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Args)]
pub struct JaccardArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub outlier_tasks: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub z: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub lambda_grid: Vec<f64>,
    /// Flag reports whose mean overlap falls strictly below this.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    pub ref_size: usize,
    #[arg(long, default_value_t = 768)]
    pub d_enc: usize,
    #[arg(long, value_enum, default_value = "points")]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "prox")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    #[arg(long, default_value_t = 20.0)]
    pub inv_tau: f64,
    #[arg(long, default_value = "cosine")]
    pub metric: DistanceMetric,
    /// Timed queries per seed.
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[arg(long, value_delimiter = ',', default_value = "7,42,99,1234,2024")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 100.0)]
    pub lambda: f64,
    /// Print a text table instead of JSON.
    #[arg(long)]
    pub table: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
