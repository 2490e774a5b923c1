use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use kgb_core::boosting::{self, write_trace_csv, BoostConfig, BoostedModel};
use kgb_core::data::{load_csv, BinnedDataset, FeatureQuantizer, RawDataset, Table, TargetColumn};
use kgb_core::oracle::OracleCaps;
use kgb_core::posterior::{member_seed, sample_posterior, summarize, KgbConfig, PosteriorSample};
use kgb_core::uncertainty::{self, rejection_curve, rejection_grid};
use kgb_core::verify::{self, CheckStatus, VerifyOptions};
use kgb_core::{fixtures, synthetic, Error};
use rayon::prelude::*;
use serde_json::json;

use crate::manifest::ManifestBuilder;
use crate::{
    DataArgs, EvaluateArgs, HeartArgs, OracleArgs, PredictArgs, SampleArgs, TrainArgs, TreeArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// Checks ran and at least one failed.
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::InvalidConfig(_)) => 2,
            CliError::Core(Error::CapacityExceeded { .. }) => 3,
            CliError::Core(_) | CliError::ChecksFailed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::ChecksFailed(n) => write!(f, "{n} check(s) failed"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(Error::Csv(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Cap the rayon pool at `KGB_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("KGB_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "KGB_THREADS must be a positive integer, got {value:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn read_table(path: &Path) -> Result<Table> {
    Ok(Table::read(path)?)
}

fn require_columns(table: &Table, names: &[String], path: &Path) -> Result<()> {
    if let Some(missing) = names.iter().find(|n| table.column_index(n).is_none()) {
        return Err(CliError::Usage(format!(
            "{} has no column {missing:?} (columns: {})",
            path.display(),
            table.headers.join(", ")
        )));
    }
    Ok(())
}

fn require_target(table: &Table, target: &TargetColumn, path: &Path) -> Result<()> {
    match target {
        TargetColumn::Name(n) => require_columns(table, std::slice::from_ref(n), path),
        TargetColumn::Index(i) if *i >= table.headers.len() => Err(CliError::Usage(format!(
            "target index {i} is out of range for {} columns",
            table.headers.len()
        ))),
        TargetColumn::Index(_) => Ok(()),
    }
}

fn load_training(args: &DataArgs, bins: usize) -> Result<(RawDataset, BinnedDataset)> {
    let table = read_table(&args.data)?;
    require_target(&table, &args.target, &args.data)?;
    require_columns(&table, &args.exclude, &args.data)?;
    let raw = load_csv(&args.data, &args.target, &args.exclude, args.clip)?;
    let binned = FeatureQuantizer::fit(&raw, bins)?.quantize(&raw)?;
    Ok((raw, binned))
}

fn feature_names(raw: &RawDataset) -> Vec<String> {
    raw.feature_names()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| (0..raw.n_features()).map(|i| format!("x{i}")).collect())
}

/// Row-major query features selected by name.
fn read_queries(path: &Path, names: &[String]) -> Result<(Vec<f64>, usize)> {
    let table = read_table(path)?;
    require_columns(&table, names, path)?;
    Ok((table.select(names)?, table.rows.len()))
}

fn boost_config(tree: &TreeArgs, lambda: f64) -> BoostConfig {
    BoostConfig {
        learning_rate: tree.lr,
        l2_regularization: lambda,
        iterations: tree.iterations,
        depth: tree.depth,
        bins: tree.bins,
        random_strength: tree.beta,
        seed: tree.seed,
        record_trace: false,
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let out = &args.out.out;
    create_out(out)?;
    let (raw, data) = load_training(&args.data, args.tree.bins)?;
    let mut cfg = boost_config(&args.tree, args.lambda);
    cfg.record_trace = args.trace;
    let mut manifest = ManifestBuilder::new("train", &cfg, Some(cfg.seed));
    manifest.input(&args.data.data);
    let (model, trace) = if args.trace {
        let (m, t) = boosting::train_with_trace(&data, &cfg)?;
        (m, Some(t))
    } else {
        (boosting::train(&data, &cfg)?, None)
    };
    let model = model.with_feature_names(Some(feature_names(&raw)));
    let model_path = out.join("model.json");
    model.save(&model_path)?;
    manifest.artifact(&model_path);
    if let Some(trace) = trace {
        let path = out.join("trace.csv");
        write_trace_csv(&trace, fs::File::create(&path)?)?;
        manifest.artifact(&path);
    }
    manifest.extra("training_rows", data.n_rows());
    manifest.extra("target_bound", data.target_bound());
    manifest.write(out)?;
    println!(
        "trained {} trees on {} rows -> {}",
        model.trees.len(),
        data.n_rows(),
        model_path.display()
    );
    Ok(())
}

enum AnyModel {
    Boosted(BoostedModel),
    Posterior(Box<PosteriorSample>),
}

impl AnyModel {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("prior").is_some() {
            Ok(AnyModel::Posterior(Box::new(serde_json::from_str(&text)?)))
        } else {
            Ok(AnyModel::Boosted(BoostedModel::from_json(&text)?))
        }
    }

    fn boosted(&self) -> &BoostedModel {
        match self {
            AnyModel::Boosted(m) => m,
            AnyModel::Posterior(p) => &p.model,
        }
    }

    fn predict(&self, features: &[f64], d: usize) -> Result<Vec<f64>> {
        Ok(match self {
            AnyModel::Boosted(m) => m.predict(features, d)?,
            AnyModel::Posterior(p) => p.predict(features, d)?,
        })
    }
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let out = &args.out.out;
    create_out(out)?;
    let model = AnyModel::load(&args.model)?;
    let boosted = model.boosted();
    let names = boosted.feature_names.clone().ok_or_else(|| {
        CliError::Usage("model has no feature names; retrain it with this tool".into())
    })?;
    let (features, n) = read_queries(&args.queries, &names)?;
    let preds = model.predict(&features, names.len())?;
    let mut manifest = ManifestBuilder::new("predict", &json!({"model": args.model}), None);
    manifest.input(&args.model);
    manifest.input(&args.queries);
    let path = out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["query_id", "prediction"])?;
    for (i, p) in preds.iter().enumerate() {
        w.write_record([i.to_string(), p.to_string()])?;
    }
    w.flush()?;
    manifest.artifact(&path);
    manifest.write(out)?;
    println!("wrote {n} predictions -> {}", path.display());
    Ok(())
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let out = &args.out.out;
    create_out(out)?;
    if args.members == 0 {
        return Err(CliError::Usage("--members must be at least 1".into()));
    }
    let (raw, data) = load_training(&args.data, args.tree.bins)?;
    let cfg = KgbConfig {
        boost: boost_config(&args.tree, 0.0),
        prior_iterations: args.prior_iterations,
        sigma: args.sigma,
        delta: args.delta,
    };
    cfg.validate(data.n_rows())?;
    let names = feature_names(&raw);
    let (features, n_queries) = match &args.queries {
        Some(path) => read_queries(path, &names)?,
        None => (raw.features().to_vec(), raw.n_rows()),
    };
    let mut manifest = ManifestBuilder::new(
        "sample",
        &json!({"kgb": cfg, "members": args.members}),
        Some(args.tree.seed),
    );
    manifest.input(&args.data.data);
    if let Some(q) = &args.queries {
        manifest.input(q);
    }
    manifest.extra("effective_lambda", cfg.effective_l2());
    manifest.extra("members", args.members);

    let samples: Vec<PosteriorSample> = (0..args.members)
        .into_par_iter()
        .map(|i| sample_posterior(&data, &cfg, member_seed(args.tree.seed, i)))
        .collect::<kgb_core::Result<_>>()?;
    let member_dir = out.join("members");
    fs::create_dir_all(&member_dir)?;
    let mut predictions = Vec::with_capacity(samples.len());
    for (i, s) in samples.into_iter().enumerate() {
        let mut s = s;
        s.model.feature_names = Some(names.clone());
        let path = member_dir.join(format!("member_{i:04}.json"));
        fs::write(&path, serde_json::to_string(&s)?)?;
        manifest.artifact(&path);
        predictions.push(s.predict(&features, names.len())?);
    }

    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    if args.members == 1 {
        eprintln!("warning: one member gives no variance; the variance columns are omitted");
        w.write_record(["query_id", "mean"])?;
        for (i, m) in predictions[0].iter().enumerate() {
            w.write_record([i.to_string(), m.to_string()])?;
        }
    } else {
        let summary = summarize(&predictions)?;
        let predictive = summary.predictive_variance(cfg.delta);
        w.write_record(["query_id", "mean", "variance", "predictive_variance"])?;
        for i in 0..n_queries {
            w.write_record([
                i.to_string(),
                summary.mean[i].to_string(),
                summary.variance[i].to_string(),
                predictive[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    manifest.artifact(&path);
    manifest.write(out)?;
    println!(
        "sampled {} members (lambda = {}) -> {}",
        args.members,
        cfg.effective_l2(),
        path.display()
    );
    Ok(())
}

fn column(table: &Table, name: &str, path: &Path) -> Result<Vec<f64>> {
    require_columns(table, &[name.to_string()], path)?;
    Ok(table.column(table.column_index(name).expect("checked")))
}

fn metric_or_null(value: kgb_core::Result<f64>, name: &str) -> Result<serde_json::Value> {
    match value {
        Ok(v) => Ok(json!(v)),
        Err(Error::UndefinedMetric(why)) => {
            eprintln!("warning: {name} is undefined: {why}");
            Ok(serde_json::Value::Null)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let out = &args.out.out;
    create_out(out)?;
    let pred_table = read_table(&args.predictions)?;
    let target_path = args
        .targets
        .clone()
        .unwrap_or_else(|| args.predictions.clone());
    let target_table = match &args.targets {
        Some(p) => read_table(p)?,
        None => pred_table.clone(),
    };
    let preds = column(&pred_table, &args.prediction_column, &args.predictions)?;
    let unc = column(&pred_table, &args.uncertainty_column, &args.predictions)?;
    let targets = column(&target_table, &args.target_column, &target_path)?;
    if targets.len() != preds.len() {
        return Err(CliError::Usage(format!(
            "{} has {} rows but {} has {}",
            target_path.display(),
            targets.len(),
            args.predictions.display(),
            preds.len()
        )));
    }
    let ood: Option<Vec<bool>> = match (&args.ood_column, &args.in_domain_column) {
        (Some(c), _) => Some(
            column(&target_table, c, &target_path)?
                .iter()
                .map(|&v| v != 0.0)
                .collect(),
        ),
        (None, Some(c)) => Some(
            column(&target_table, c, &target_path)?
                .iter()
                .map(|&v| v == 0.0)
                .collect(),
        ),
        (None, None) => None,
    };
    let errors = uncertainty::squared_errors(&targets, &preds)?;
    let mut metrics = serde_json::Map::new();
    metrics.insert("points".into(), json!(targets.len()));
    metrics.insert("rmse".into(), json!(uncertainty::rmse(&targets, &preds)?));
    metrics.insert(
        "prr".into(),
        metric_or_null(uncertainty::prr(&errors, &unc), "PRR")?,
    );
    if let Some(labels) = &ood {
        metrics.insert(
            "auc_roc".into(),
            metric_or_null(uncertainty::auc_roc(&unc, labels), "AUC")?,
        );
    }

    let grid = rejection_grid(args.curve_points);
    let by_unc = rejection_curve(&errors, &unc, &grid)?;
    let by_err = rejection_curve(&errors, &errors, &grid)?;
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    let curve_path = out.join("rejection_curve.csv");
    let mut w = csv::Writer::from_path(&curve_path)?;
    w.write_record(["fraction", "uncertainty_mse", "oracle_mse", "random_mse"])?;
    for (u, o) in by_unc.iter().zip(&by_err) {
        let random = if u.fraction < 1.0 { mean_error } else { 0.0 };
        w.write_record([
            u.fraction.to_string(),
            u.mse.to_string(),
            o.mse.to_string(),
            random.to_string(),
        ])?;
    }
    w.flush()?;

    let metrics_path = out.join("metrics.json");
    fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics)? + "\n",
    )?;
    let mut manifest = ManifestBuilder::new(
        "evaluate",
        &json!({
            "target_column": args.target_column,
            "prediction_column": args.prediction_column,
            "uncertainty_column": args.uncertainty_column,
            "ood_column": args.ood_column,
            "in_domain_column": args.in_domain_column,
            "curve_points": args.curve_points,
        }),
        None,
    );
    manifest.input(&args.predictions);
    if let Some(t) = &args.targets {
        manifest.input(t);
    }
    manifest.artifact(&metrics_path);
    manifest.artifact(&curve_path);
    manifest.write(out)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

pub fn oracle_verify(args: OracleArgs) -> Result<()> {
    let out = &args.out.out;
    create_out(out)?;
    let (data, reference, input): (BinnedDataset, Option<Vec<f64>>, Option<PathBuf>) =
        match &args.data {
            None => {
                let reference = match args.reference_column.as_deref() {
                    None | Some("f_star") => Some(fixtures::krr8_reference_fit()?),
                    Some(other) => {
                        return Err(CliError::Usage(format!(
                            "the bundled fixture has no column {other:?}"
                        )))
                    }
                };
                let raw = kgb_core::data::dataset_from_table(
                    &fixtures::krr8_table()?,
                    &TargetColumn::Name("y".into()),
                    &["f_star".to_string()],
                    None,
                )?;
                (
                    FeatureQuantizer::fit(&raw, args.bins)?.quantize(&raw)?,
                    reference,
                    None,
                )
            }
            Some(path) => {
                let target = args
                    .target
                    .clone()
                    .expect("clap requires --target with --data");
                let table = read_table(path)?;
                require_target(&table, &target, path)?;
                let mut exclude = args.exclude.clone();
                let reference = match &args.reference_column {
                    Some(c) => {
                        exclude.push(c.clone());
                        Some(column(&table, c, path)?)
                    }
                    None => None,
                };
                require_columns(&table, &exclude, path)?;
                let raw = kgb_core::data::dataset_from_table(&table, &target, &exclude, None)?;
                (
                    FeatureQuantizer::fit(&raw, args.bins)?.quantize(&raw)?,
                    reference,
                    Some(path.clone()),
                )
            }
        };
    let boost = BoostConfig {
        learning_rate: args.lr,
        l2_regularization: args.lambda,
        iterations: args.iterations,
        depth: args.depth,
        bins: args.bins,
        random_strength: args.beta,
        seed: args.seed,
        record_trace: false,
    };
    let options = VerifyOptions {
        boost: boost.clone(),
        trials: args.trials,
        law_draws: args.law_draws,
        caps: OracleCaps {
            max_structures: args.max_structures,
            max_permutation_depth: args.max_permutation_depth,
        },
        reference_fit: reference,
    };
    let mut manifest = ManifestBuilder::new(
        "oracle-verify",
        &json!({
            "boost": boost,
            "trials": args.trials,
            "law_draws": args.law_draws,
            "max_structures": args.max_structures.to_string(),
            "max_permutation_depth": args.max_permutation_depth,
            "reference_column": args.reference_column,
        }),
        Some(args.seed),
    );
    if let Some(p) = &input {
        manifest.input(p);
    }
    let report = verify::run(&data, &options)?;
    for c in &report.checks {
        let tag = match c.status {
            CheckStatus::Passed => "PASS",
            CheckStatus::Failed => "FAIL",
            CheckStatus::Skipped => "SKIP",
            CheckStatus::Warning => "WARN",
        };
        println!("{tag} {:<36} {}", c.name, c.detail);
    }
    let mut summary = json!({ "passed": report.passed(), "checks": report.checks });
    if let Some(cmp) = &report.convergence {
        for (name, r) in [
            ("convergence", &cmp.full),
            ("convergence_half_lr", &cmp.halved),
        ] {
            let csv_path = out.join(format!("{name}.csv"));
            r.write_curve_csv(fs::File::create(&csv_path)?)?;
            let json_path = out.join(format!("{name}.json"));
            fs::write(&json_path, r.summary_json()? + "\n")?;
            manifest.artifact(&csv_path);
            manifest.artifact(&json_path);
        }
        summary["floor_ratio"] = json!(cmp.ratio());
    }
    let report_path = out.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    manifest.artifact(&report_path);
    manifest.write(out)?;
    let failed = report.failures().count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

pub fn synthetic_heart(args: HeartArgs) -> Result<()> {
    let out = &args.out.out;
    create_out(out)?;
    let points = synthetic::sample_points(args.points, args.seed, args.domain_variant)?;
    let (train, eval) = synthetic::split(&points);
    let train_path = out.join("train.csv");
    let mut w = csv::Writer::from_path(&train_path)?;
    w.write_record(["x", "y", "target"])?;
    for p in &train {
        w.write_record([p.x.to_string(), p.y.to_string(), p.target.to_string()])?;
    }
    w.flush()?;
    let eval_path = out.join("eval.csv");
    let mut w = csv::Writer::from_path(&eval_path)?;
    w.write_record(["x", "y", "target", "in_domain"])?;
    for p in &eval {
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            p.target.to_string(),
            u8::from(p.in_domain).to_string(),
        ])?;
    }
    w.flush()?;
    let preset = KgbConfig::heart_preset();
    let mut manifest = ManifestBuilder::new(
        "synthetic-heart",
        &json!({"points": args.points, "domain_variant": args.domain_variant}),
        Some(args.seed),
    );
    manifest.artifact(&train_path);
    manifest.artifact(&eval_path);
    manifest.extra("in_domain_points", train.len());
    manifest.extra("recommended_sample_config", &preset);
    manifest.write(out)?;
    println!(
        "{} of {} points in the domain -> {}, {}",
        train.len(),
        eval.len(),
        train_path.display(),
        eval_path.display()
    );
    Ok(())
}
