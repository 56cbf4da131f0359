use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dcsm", version, about = "Deep clustering survival machines")]
pub struct Cli {
    /// Run every data-parallel stage on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one synthetic dataset, or the full 6 × 6 benchmark grid.
    Simulate(SimulateArgs),
    /// Fit a model and save it.
    Train(TrainArgs),
    /// C-index, log-rank and cluster metrics of a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Per-instance cluster and mixture weights.
    Cluster(ClusterArgs),
    /// k-fold cross-validated grid search.
    Cv(CvArgs),
    /// Kaplan–Meier curves of the learned clusters.
    ExportKm(ExportKmArgs),
    /// Survival curves of the learned experts.
    ExportExperts(ExportExpertsArgs),
}

#[derive(Debug, Args)]
pub struct Columns {
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "event")]
    pub event_col: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.3)]
    pub censoring: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Spread of the cluster centers.
    #[arg(long)]
    pub separation: Option<f64>,
    /// Start from the well-separated preset instead of the defaults.
    #[arg(long)]
    pub well_separated: bool,
    /// Write all 36 (n, d) cells; `--out` is then a directory.
    #[arg(long)]
    pub grid: bool,
    /// Output CSV (or directory with `--grid`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden widths, comma separated (`50,50`).
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub model_out: PathBuf,
    #[command(flatten)]
    pub columns: Columns,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with `instance_id,true_cluster`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Metrics JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub columns: Columns,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub columns: Columns,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Grid file; without it the 12-config default grid is used.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    /// Comma-separated trade-off weights.
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Comma-separated learning rates.
    #[arg(long)]
    pub lrs: Option<String>,
    /// `|`-separated architectures (`50|50,50`).
    #[arg(long)]
    pub hiddens: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV (one row per config and fold).
    #[arg(long)]
    pub out: PathBuf,
    /// Selected config file; defaults to `<out stem>_selected.conf`.
    #[arg(long)]
    pub selected_out: Option<PathBuf>,
    #[command(flatten)]
    pub columns: Columns,
}

#[derive(Debug, Args)]
pub struct ExportKmArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also draw the curves as an SVG.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[command(flatten)]
    pub columns: Columns,
}

#[derive(Debug, Args)]
pub struct ExportExpertsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Right end of the time grid in raw units; defaults to the largest
    /// training time.
    #[arg(long)]
    pub tmax: Option<f64>,
}
