//! Command-line driver: six subcommands covering synthetic data, feature
//! extraction, the pairwise accuracy matrix, combination training, the
//! downstream classifier, and hyperparameter sweeps. Exit codes: 0 success,
//! 1 usage or configuration error, 2 data error, 3 training
//! non-convergence.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fea2fea::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "fea2fea",
    version,
    about = "Structural feature correlation analysis on graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate random geometric graphs as edge-list files.
    Synth(CommonArgs),
    /// Compute the five structural features and export them as TSV.
    Features(CommonArgs),
    /// Train every feature pair and export the 5x5 accuracy matrix.
    Single(CommonArgs),
    /// Train threshold-filtered feature combinations for one target.
    Multiple(CommonArgs),
    /// Train the downstream node or graph classifier.
    Classify(CommonArgs),
    /// Vary bins, depth, or threshold over a grid and tabulate accuracy.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Edge-list file (one "u<TAB>v" pair per line).
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Node label file for node classification, one integer per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory holding a TUDataset-format graph collection.
    #[arg(long)]
    tudataset: Option<PathBuf>,
    /// File prefix inside the TUDataset directory (also names the run).
    #[arg(long)]
    dataset_name: Option<String>,
    /// Synthetic geometric graph node count.
    #[arg(long)]
    synth_n: Option<usize>,
    /// Synthetic collection size for graph-level tasks.
    #[arg(long)]
    synth_graphs: Option<usize>,
    /// Geometric connection radius (default scales with node count).
    #[arg(long)]
    radius: Option<f64>,

    /// Root seed; every random choice derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of runs: seeds are seed, seed+1, ...
    #[arg(long)]
    num_seeds: Option<usize>,

    /// Convolution: gcn | gin | sage | gat | mlp.
    #[arg(long)]
    conv: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batchnorm: Option<bool>,
    #[arg(long)]
    skip: Option<bool>,

    /// Number of bins for feature discretization.
    #[arg(long)]
    bins: Option<usize>,
    /// Redundancy threshold for combination filtering.
    #[arg(long)]
    threshold: Option<f64>,
    /// Target feature: cons | deg | clu | pr | avglen.
    #[arg(long)]
    target: Option<String>,
    /// Input feature for sweep pair tasks.
    #[arg(long)]
    input: Option<String>,
    /// Output feature for sweep pair tasks.
    #[arg(long)]
    output: Option<String>,
    /// Concatenation: simple | bilinear | ntn | all.
    #[arg(long)]
    method: Option<String>,
    /// Per-feature encoder output dimension.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Comma-separated features to augment with; empty disables augmentation.
    #[arg(long)]
    members: Option<String>,
    /// Graph readout: mean | sum.
    #[arg(long)]
    readout: Option<String>,
    /// Task mode: node | graph.
    #[arg(long)]
    mode: Option<String>,
    /// Correlation matrix JSON from a single run.
    #[arg(long)]
    matrix: Option<PathBuf>,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    val_ratio: Option<f64>,
    #[arg(long)]
    test_ratio: Option<f64>,

    /// Worker thread count for parallel sections.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Parameter to vary: bins | depth | threshold.
    #[arg(long)]
    param: String,
    /// Inclusive grid "start..end" stepped by --step (default 1).
    #[arg(long)]
    range: Option<String>,
    /// Explicit comma-separated grid values.
    #[arg(long)]
    values: Option<String>,
    /// Grid step for --range.
    #[arg(long)]
    step: Option<f64>,
    /// Skip cells whose output file already exists.
    #[arg(long)]
    resume: bool,
}

impl CommonArgs {
    fn as_config(&self) -> RunConfig {
        RunConfig {
            edges: self.edges.clone(),
            labels: self.labels.clone(),
            tudataset: self.tudataset.clone(),
            dataset_name: self.dataset_name.clone(),
            synth_n: self.synth_n,
            synth_graphs: self.synth_graphs,
            radius: self.radius,
            seed: self.seed,
            num_seeds: self.num_seeds,
            conv: self.conv.clone(),
            hidden: self.hidden,
            depth: self.depth,
            dropout: self.dropout,
            batchnorm: self.batchnorm,
            skip: self.skip,
            bins: self.bins,
            threshold: self.threshold,
            target: self.target.clone(),
            input: self.input.clone(),
            output: self.output.clone(),
            method: self.method.clone(),
            embed_dim: self.embed_dim,
            members: self.members.clone(),
            readout: self.readout.clone(),
            mode: self.mode.clone(),
            matrix: self.matrix.clone(),
            epochs: self.epochs,
            patience: self.patience,
            lr: self.lr,
            weight_decay: self.weight_decay,
            train_ratio: self.train_ratio,
            val_ratio: self.val_ratio,
            test_ratio: self.test_ratio,
            jobs: self.jobs,
        }
    }

    /// File config overlaid with flags; flags win.
    fn effective(&self) -> Result<RunConfig, Error> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        Ok(base.merged_with(&self.as_config()))
    }

    fn out_dir(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
    }
}

fn dispatch(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Cmd::Synth(args) => commands::synth(&args.effective()?, &args.out_dir("synth")),
        Cmd::Features(args) => commands::features(&args.effective()?, &args.out_dir("features")),
        Cmd::Single(args) => commands::single(&args.effective()?, &args.out_dir("single")),
        Cmd::Multiple(args) => commands::multiple(&args.effective()?, &args.out_dir("multiple")),
        Cmd::Classify(args) => commands::classify(&args.effective()?, &args.out_dir("classify")),
        Cmd::Sweep(args) => {
            let spec = commands::SweepSpec {
                param: args.param.clone(),
                range: args.range.clone(),
                values: args.values.clone(),
                step: args.step,
                resume: args.resume,
            };
            commands::sweep(&args.common.effective()?, &args.common.out_dir("sweep"), &spec)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 1,
        Error::NoConvergence { .. } => 3,
        _ => 2,
    }
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
