use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod reports;

/// Depth estimation with alternating auxiliary-task steps.
#[derive(Debug, Parser)]
#[command(name = "auxstep", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset and split it into train and test manifests.
    GenData(GenDataArgs),
    /// Train one run from a TOML config.
    Train(TrainArgs),
    /// Evaluate a completed run on a test manifest.
    Eval(EvalArgs),
    /// Sweep alpha over auxiliary tasks and seeds.
    SweepAlpha(SweepArgs),
    /// Baseline and joint runs over fractions of the depth data.
    DataEfficiency(EfficiencyArgs),
    /// Derive presence vectors and dominant classes from segmentation labels.
    MldcExport(ExportArgs),
    /// Chart sweep or data-efficiency reports, or rasterise an error-map difference.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2500)]
    scenes: usize,
    /// Generator seed; falls back to AUXSTEP_SEED, then 0.
    #[arg(long, env = "AUXSTEP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Number of semantic classes, background included.
    #[arg(long, default_value_t = 12)]
    classes: usize,
    /// Fraction of invalid depth pixels per scene: one value, or a MIN MAX range.
    #[arg(long, num_args = 1..=2, value_name = "FRAC")]
    invalid_frac: Vec<f64>,
    /// Fraction of scenes in the train split.
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML training config.
    #[arg(long)]
    config: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed used when the config has none; falls back to AUXSTEP_SEED, then 0.
    #[arg(long, env = "AUXSTEP_SEED")]
    seed: Option<u64>,
    /// Continue from the run directory's checkpoint.
    #[arg(long, conflicts_with = "force")]
    resume: bool,
    /// Stop after this many global steps, leaving a resumable checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Completed run directory.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    test_manifest: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write one JSON error map per sample into this directory.
    #[arg(long)]
    error_maps: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML experiment spec; flags below override its fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Auxiliary task; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    task: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct EfficiencyArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    seg_manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// sweep.csv or data_efficiency.csv files.
    #[arg(long = "report", required_unless_present = "diff", conflicts_with = "diff")]
    reports: Vec<PathBuf>,
    /// Baseline and proposed error maps; writes a PPM difference raster.
    #[arg(long, num_args = 2, value_names = ["BASELINE", "OURS"])]
    diff: Option<Vec<PathBuf>>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::SweepAlpha(a) => commands::sweep_alpha(a),
        Command::DataEfficiency(a) => commands::data_efficiency(a),
        Command::MldcExport(a) => commands::mldc_export(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = if e.is_validation() { ("validation", 1) } else { ("runtime", 2) };
            let message = e.to_string().replace('\n', " ");
            eprintln!("auxstep: error[{kind}]: {message}");
            ExitCode::from(code)
        }
    }
}
