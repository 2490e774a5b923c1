mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgb_core::data::TargetColumn;
use kgb_core::synthetic::DomainVariant;

/// Gradient boosting with randomized oblivious trees and posterior sampling.
///
/// Exit codes: 0 success, 1 runtime or check failure, 2 usage error,
/// 3 enumeration capacity refused. Set KGB_THREADS to cap parallelism.
#[derive(Parser, Debug)]
#[command(name = "kgb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one boosted model.
    Train(TrainArgs),
    /// Predict with a trained model or a posterior sample.
    Predict(PredictArgs),
    /// Train an ensemble of posterior samples and summarize it at query points.
    Sample(SampleArgs),
    /// Compute RMSE, PRR and OOD AUC from a predictions file.
    Evaluate(EvaluateArgs),
    /// Check boosting against brute-force kernel computations on a small instance.
    OracleVerify(OracleArgs),
    /// Generate the two-dimensional heart-domain benchmark.
    SyntheticHeart(HeartArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Target column, by name or zero-based index.
    #[arg(long)]
    target: TargetColumn,
    /// Columns to ignore (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    /// Rescale targets so that (1/2N) sum y^2 <= R^2.
    #[arg(long, value_name = "R")]
    clip: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct TreeArgs {
    /// Boosting iterations.
    #[arg(long, default_value_t = 900)]
    iterations: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.3)]
    lr: f64,
    /// Tree depth.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Thresholds per feature.
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Random strength of split selection; 0 is greedy. Useful grid: 0.01, 0.1, 1.
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tree: TreeArgs,
    /// Shrinkage strength; each iteration scales the model by 1 - lambda * lr / N.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Also write the per-iteration trace.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model JSON from `train`, or a member JSON from `sample`.
    #[arg(long)]
    model: PathBuf,
    /// CSV containing the model's feature columns.
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tree: TreeArgs,
    /// Ensemble size; at least 2 for a variance.
    #[arg(long, default_value_t = 100)]
    members: usize,
    /// Trees in each prior draw.
    #[arg(long, default_value_t = 100)]
    prior_iterations: usize,
    /// Prior scale.
    #[arg(long, default_value_t = 1e-2)]
    sigma: f64,
    /// Observation noise scale.
    #[arg(long, default_value_t = 1e-4)]
    delta: f64,
    /// Query CSV; defaults to the training data.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// CSV with prediction and uncertainty columns.
    #[arg(long)]
    predictions: PathBuf,
    /// CSV with targets and labels, row-aligned with the predictions;
    /// defaults to the predictions file.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long, default_value = "target")]
    target_column: String,
    #[arg(long, default_value = "mean")]
    prediction_column: String,
    #[arg(long, default_value = "variance")]
    uncertainty_column: String,
    /// Column that is non-zero for out-of-domain rows.
    #[arg(long, conflicts_with = "in_domain_column")]
    ood_column: Option<String>,
    /// Column that is non-zero for in-domain rows.
    #[arg(long)]
    in_domain_column: Option<String>,
    /// Points on the rejection curve.
    #[arg(long, default_value_t = 101)]
    curve_points: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Instance CSV; defaults to the bundled 8-point fixture.
    #[arg(long, requires = "target")]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<TargetColumn>,
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    /// Column holding a stored interpolating fit to check.
    #[arg(long)]
    reference_column: Option<String>,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    bins: usize,
    /// Random strength; 0 skips the checks of the tree law.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Iterations at the full learning rate; the half-rate run uses twice as many.
    #[arg(long, default_value_t = 200_000)]
    iterations: usize,
    /// Seeds averaged by the convergence check.
    #[arg(long, default_value_t = 8)]
    trials: usize,
    /// Trees drawn by the frequency check.
    #[arg(long, default_value_t = 20_000)]
    law_draws: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_structures: u128,
    #[arg(long, default_value_t = 6)]
    max_permutation_depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct HeartArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points drawn from the unit square.
    #[arg(long, default_value_t = 10_000)]
    points: usize,
    /// `difference` uses (x-1/2)^2 - (y-1/2)^2, `sum` uses (x-1/2)^2 + (y-1/2)^2.
    #[arg(long, default_value = "difference")]
    domain_variant: DomainVariant,
    #[command(flatten)]
    out: OutArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code());
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Sample(a) => commands::sample(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::OracleVerify(a) => commands::oracle_verify(a),
        Command::SyntheticHeart(a) => commands::synthetic_heart(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
