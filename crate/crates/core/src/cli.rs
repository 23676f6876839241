//! Command-line surface. Every command writes its payload files plus a
//! `manifest.json` into `--out`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use crate::bench::{self, Algorithm, BenchSetup};
use crate::config::RunConfig;
use crate::data::{self, Dataset, SplitTag, SyntheticKind};
use crate::error::{Error, Result};
use crate::influence::influence_scores;
use crate::io::{self, Manifest};
use crate::metrics::{self, craft_adversarial, EvalRole, EvalSet, MetricKind};
use crate::model::{self, ModelParams, Sample};
use crate::oracle::{self, LooOptions};
use crate::qp;
use crate::unlearn::{self, case_histogram, HardMode, Method};

fn parse_with<T>(s: &str) -> std::result::Result<T, String>
where
    T: FromStr,
    T::Err: Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "soft-unlearn", version, about = "Soft-weighted unlearning for regularized logistic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a train/validation/test split.
    GenSynthetic(GenArgs),
    /// Fit the model on the training split.
    Train(TrainArgs),
    /// Per-sample utility and metric influence (Step 1).
    Influence(InfluenceArgs),
    /// Sample weights from an influence table (Step 2).
    SolveWeights(SolveArgs),
    /// Evaluate, optimize weights and correct the model in one run.
    Unlearn(UnlearnArgs),
    /// Leave-one-out retraining against influence estimates.
    LooOracle(LooArgs),
    /// Hard vs soft comparison and the deletion-rate sweep.
    Benchmark(BenchArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DataOpts {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long)]
    sensitive_col: Option<String>,
    #[arg(long)]
    split_col: Option<String>,
    /// Comma-separated feature columns; default is every other column.
    #[arg(long, value_delimiter = ',')]
    feature_cols: Option<Vec<String>>,
    /// Z-score features with training-split statistics.
    #[arg(long)]
    standardize: bool,
    /// Append the sensitive attribute as a feature.
    #[arg(long)]
    sensitive_as_feature: bool,
}

#[derive(Debug, Args)]
struct TrainOpts {
    #[arg(long)]
    l2_reg: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct MetricOpts {
    /// dp, eop or robustness.
    #[arg(long, value_parser = parse_with::<MetricKind>)]
    metric: Option<MetricKind>,
    /// Adversarial margin factor (> 1).
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct UnlearnOpts {
    /// soft_if, soft_gd, hard_if or hard_ga_ft.
    #[arg(long, value_parser = parse_with::<Method>)]
    method: Option<Method>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Over-correction bound in metric units; default is the current metric.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_descent: Option<f64>,
    #[arg(long)]
    lr_ascent: Option<f64>,
    /// Skip the correction unless the validation metric exceeds this.
    #[arg(long)]
    delta_threshold: Option<f64>,
    /// Removal fraction of the hard methods.
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// biased-gauss, symmetric or boundary2d.
    #[arg(long, value_parser = parse_with::<SyntheticKind>)]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    bias: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Debug, Args)]
struct InfluenceArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    metric: MetricOpts,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    unlearn: UnlearnOpts,
    #[arg(long)]
    influence: PathBuf,
    /// With --model, used to measure the metric bound when --delta is absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long)]
    sensitive_col: Option<String>,
    #[arg(long)]
    split_col: Option<String>,
    #[arg(long, value_delimiter = ',')]
    feature_cols: Option<Vec<String>>,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    sensitive_as_feature: bool,
}

#[derive(Debug, Args)]
struct UnlearnArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    metric: MetricOpts,
    #[command(flatten)]
    unlearn: UnlearnOpts,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct LooArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    metric: MetricOpts,
    /// Run even when the training split exceeds the retraining cap.
    #[arg(long)]
    allow_large: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    metric: MetricOpts,
    #[command(flatten)]
    unlearn: UnlearnOpts,
    /// Trained model; fitted on the training split when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated subset of `if,ga_ft`.
    #[arg(long, value_delimiter = ',', default_value = "if,ga_ft", value_parser = parse_algorithm)]
    algorithms: Vec<Algorithm>,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    match s.trim().replace('-', "_").as_str() {
        "if" => Ok(Algorithm::If),
        "ga_ft" | "gd" => Ok(Algorithm::GaFt),
        other => Err(format!("unknown algorithm `{other}`")),
    }
}

fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

impl Common {
    fn flags(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            out: self.out.clone(),
            ..RunConfig::default()
        }
    }
}

impl DataOpts {
    fn flags(&self) -> RunConfig {
        RunConfig {
            label_col: self.label_col.clone(),
            sensitive_col: self.sensitive_col.clone(),
            split_col: self.split_col.clone(),
            feature_cols: self.feature_cols.clone(),
            standardize: flag(self.standardize),
            sensitive_as_feature: flag(self.sensitive_as_feature),
            ..RunConfig::default()
        }
    }
}

impl TrainOpts {
    fn flags(&self) -> RunConfig {
        RunConfig {
            l2_reg: self.l2_reg,
            damping: self.damping,
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            ..RunConfig::default()
        }
    }
}

impl MetricOpts {
    fn flags(&self) -> RunConfig {
        RunConfig {
            metric: self.metric,
            gamma: self.gamma,
            ..RunConfig::default()
        }
    }
}

impl UnlearnOpts {
    fn flags(&self) -> RunConfig {
        RunConfig {
            method: self.method,
            lambda: self.lambda,
            delta: self.delta,
            epochs: self.epochs,
            lr_descent: self.lr_descent,
            lr_ascent: self.lr_ascent,
            delta_threshold: self.delta_threshold,
            hard_removal_fraction: self.fraction,
            ..RunConfig::default()
        }
    }
}

/// File config (if any) under the merged command-line flags.
fn resolve(common: &Common, parts: &[RunConfig]) -> Result<RunConfig> {
    let mut flags = common.flags();
    for p in parts {
        flags = flags.overlay(p.clone());
    }
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?.overlay(flags),
        None => flags,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::InvalidArgument("missing --out (or `out` in the config file)".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn metric_of(cfg: &RunConfig) -> Result<MetricKind> {
    let kind = cfg.metric.unwrap_or(MetricKind::Dp);
    if kind == MetricKind::Utility {
        return Err(Error::InvalidArgument("--metric must be dp, eop or robustness".into()));
    }
    Ok(kind)
}

struct Loaded {
    train: Vec<Sample>,
    val: EvalSet,
    test: EvalSet,
    dim: usize,
}

fn load_data(path: &Path, cfg: &RunConfig, manifest: &mut Manifest) -> Result<Loaded> {
    manifest.input("data", path)?;
    let mut ds: Dataset = data::load_csv(path, &cfg.csv_schema())?;
    ds.validate()?;
    if cfg.standardize.unwrap_or(false) {
        ds.standardize()?;
    }
    let saf = cfg.sensitive_as_feature.unwrap_or(false);
    Ok(Loaded {
        train: ds.samples(SplitTag::Train, saf),
        val: ds.eval_set(EvalRole::Validation, saf)?,
        test: ds.eval_set(EvalRole::Test, saf)?,
        dim: ds.dim() + usize::from(saf),
    })
}

fn load_model_for(path: &Path, dim: usize, manifest: &mut Manifest) -> Result<ModelParams> {
    manifest.input("model", path)?;
    let m = io::load_model(path)?;
    if m.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: m.dim(),
        });
    }
    Ok(m)
}

fn start(command: &str, argv: &[String], cfg: &RunConfig) -> Result<Manifest> {
    let mut m = Manifest::new(command, argv);
    m.config = json!({
        "settings": cfg,
        "resolved": {
            "seed": cfg.seed(),
            "gamma": cfg.gamma(),
            "train": cfg.train_cfg(),
            "unlearn": cfg.unlearn_cfg(),
        },
    });
    m.seed = cfg.seed;
    m.metric = cfg.metric;
    Ok(m)
}

fn finish(manifest: &mut Manifest, dir: &Path, outputs: &[&str]) -> Result<()> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.write(dir)
}

fn cmd_gen(a: &GenArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve(&a.common, &[])?;
    let dir = out_dir(&cfg)?;
    let mut manifest = start("gen-synthetic", argv, &cfg)?;
    manifest.config = json!({
        "kind": a.kind.as_str(), "n": a.n, "d": a.d, "bias": a.bias, "seed": cfg.seed(),
    });
    manifest.seed = Some(cfg.seed());
    let ds = data::gen_synthetic(a.kind, a.n, a.d, a.bias, cfg.seed())?;
    data::save_csv(&ds, &dir.join("dataset.csv"))?;
    let [tr, va, te] = ds.split_sizes();
    info!("{} rows: train {tr}, validation {va}, test {te}", ds.len());
    finish(&mut manifest, &dir, &["dataset.csv"])
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve(&a.common, &[a.data.flags(), a.train.flags()])?;
    let dir = out_dir(&cfg)?;
    let mut manifest = start("train", argv, &cfg)?;
    let d = load_data(&a.data.data, &cfg, &mut manifest)?;
    let t = Instant::now();
    let m = model::train(&d.train, &cfg.train_cfg(), &ModelParams::zeros(d.dim))?;
    manifest.timings.insert("train".into(), t.elapsed().as_secs_f64());
    io::save_model(&dir.join("model.json"), &m)?;
    let summary = json!({
        "n_train": d.train.len(),
        "dim": d.dim,
        "train_objective": model::mean_loss(&d.train, &m, cfg.train_cfg().l2_reg)?,
        "validation_mean_loss": metrics::utility_loss(&d.val, &m)? / d.val.len() as f64,
        "validation_dp": metrics::demographic_parity(&d.val, &m)?,
    });
    io::write_json(&dir.join("train_summary.json"), &summary)?;
    finish(&mut manifest, &dir, &["model.json", "train_summary.json"])
}

fn cmd_influence(a: &InfluenceArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve(&a.common, &[a.data.flags(), a.train.flags(), a.metric.flags()])?;
    let kind = metric_of(&cfg)?;
    let dir = out_dir(&cfg)?;
    let mut manifest = start("influence", argv, &cfg)?;
    let d = load_data(&a.data.data, &cfg, &mut manifest)?;
    let m = load_model_for(&a.model, d.dim, &mut manifest)?;
    let t = Instant::now();
    let adv = craft_adversarial(&d.val, &m, cfg.gamma())?;
    let table = influence_scores(&d.train, &d.val, Some(&adv), &m, &cfg.train_cfg(), kind)?;
    manifest.timings.insert("evaluate".into(), t.elapsed().as_secs_f64());
    let text = io::influence_csv(&table.rows(), m.fingerprint())?;
    io::write_atomic(&dir.join("influence.csv"), text.as_bytes())?;
    finish(&mut manifest, &dir, &["influence.csv"])
}

fn cmd_solve(a: &SolveArgs, argv: &[String]) -> Result<()> {
    let data_flags = RunConfig {
        gamma: a.gamma,
        label_col: a.label_col.clone(),
        sensitive_col: a.sensitive_col.clone(),
        split_col: a.split_col.clone(),
        feature_cols: a.feature_cols.clone(),
        standardize: flag(a.standardize),
        sensitive_as_feature: flag(a.sensitive_as_feature),
        ..RunConfig::default()
    };
    let cfg = resolve(&a.common, &[data_flags, a.unlearn.flags()])?;
    let ucfg = cfg.unlearn_cfg();
    let dir = out_dir(&cfg)?;
    let mut manifest = start("solve-weights", argv, &cfg)?;
    manifest.input("influence", &a.influence)?;
    let (rows, model_fp) = io::load_influence(&a.influence)?;
    let kind = rows[0].metric_kind;
    if rows.iter().any(|r| r.metric_kind != kind) {
        return Err(Error::InvalidArgument("influence file mixes metric kinds".into()));
    }
    manifest.metric = Some(kind);
    let i_metric: Vec<f64> = rows.iter().map(|r| r.i_metric).collect();
    let i_util: Vec<f64> = rows.iter().map(|r| r.i_util).collect();

    let t = Instant::now();
    let mut extra = serde_json::Map::new();
    let w = match ucfg.method {
        Method::SoftIf | Method::SoftGd => {
            let delta = match ucfg.delta {
                Some(v) => v,
                None => measure_delta(a, &cfg, kind, model_fp, &mut manifest)?,
            };
            let q = unlearn::soft_qp_from(i_metric, i_util, ucfg.lambda, delta)?;
            extra.insert("lambda".into(), json!(ucfg.lambda));
            extra.insert("lambda_effective".into(), json!(q.lambda));
            extra.insert("delta".into(), json!(delta));
            extra.insert("qp_delta".into(), json!(q.delta));
            qp::solve_analytic(&q)?
        }
        Method::HardIf => unlearn::hard_weights_from(&i_metric, HardMode::IfRemoval, ucfg.hard_removal_fraction)?,
        Method::HardGaFt => unlearn::hard_weights_from(&i_metric, HardMode::GaFt, ucfg.hard_removal_fraction)?,
    };
    let w = match model_fp {
        Some(fp) => w.with_snapshot(fp),
        None => w,
    };
    manifest.timings.insert("optimize".into(), t.elapsed().as_secs_f64());

    io::write_atomic(&dir.join("weights.csv"), io::weights_csv(&w)?.as_bytes())?;
    let hist: BTreeMap<String, usize> = case_histogram(&w).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let mut summary = json!({
        "method": ucfg.method,
        "metric": kind,
        "n": w.len(),
        "case_histogram": hist,
        "source": w.source,
        "dual_beta1": w.dual_beta1,
        "dual_beta2": w.dual_beta2,
        "weights_l1": crate::numeric::sum(w.eps.iter().map(|e| e.abs())),
        "diagnostic": w.diagnostic,
    });
    summary.as_object_mut().expect("object").extend(extra);
    io::write_json(&dir.join("weights_summary.json"), &summary)?;
    finish(&mut manifest, &dir, &["weights.csv", "weights_summary.json"])
}

/// Validation metric at the model the influence table was computed for.
fn measure_delta(
    a: &SolveArgs,
    cfg: &RunConfig,
    kind: MetricKind,
    model_fp: Option<u64>,
    manifest: &mut Manifest,
) -> Result<f64> {
    let (Some(data_path), Some(model_path)) = (&a.data, &a.model) else {
        return Err(Error::InvalidArgument(
            "soft weights need --delta, or --data and --model to measure it".into(),
        ));
    };
    let d = load_data(data_path, cfg, manifest)?;
    let m = load_model_for(model_path, d.dim, manifest)?;
    if model_fp.is_some_and(|fp| fp != m.fingerprint()) {
        return Err(Error::StaleWeights);
    }
    match kind {
        MetricKind::Robustness => metrics::robustness_loss(&craft_adversarial(&d.val, &m, cfg.gamma())?, &m),
        k => metrics::metric_value(k, d.val.samples(), &m),
    }
}

fn cmd_unlearn(a: &UnlearnArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve(
        &a.common,
        &[a.data.flags(), a.train.flags(), a.metric.flags(), a.unlearn.flags()],
    )?;
    let kind = metric_of(&cfg)?;
    let dir = out_dir(&cfg)?;
    let mut manifest = start("unlearn", argv, &cfg)?;
    let d = load_data(&a.data.data, &cfg, &mut manifest)?;
    let m = load_model_for(&a.model, d.dim, &mut manifest)?;
    let out = unlearn::run_framework(
        &m,
        &d.train,
        &d.val,
        &d.test,
        &cfg.unlearn_cfg(),
        &cfg.train_cfg(),
        kind,
        cfg.gamma(),
    )?;
    let rt = out.report.step_runtimes;
    for (k, v) in [
        ("evaluate", rt.evaluate),
        ("optimize", rt.optimize),
        ("solve", rt.solve),
        ("correct", rt.correct),
    ] {
        manifest.timings.insert(k.into(), v);
    }
    io::write_json(&dir.join("report.json"), &out.report)?;
    io::save_model(&dir.join("model_after.json"), &out.model)?;
    let mut outputs = vec!["report.json", "model_after.json"];
    if let Some(w) = &out.weights {
        io::write_atomic(&dir.join("weights.csv"), io::weights_csv(w)?.as_bytes())?;
        outputs.push("weights.csv");
    }
    if !out.report.corrected {
        info!("correction skipped by the gate; model_after.json equals the input model");
    }
    finish(&mut manifest, &dir, &outputs)
}

fn cmd_loo(a: &LooArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve(&a.common, &[a.data.flags(), a.train.flags(), a.metric.flags()])?;
    let kind = metric_of(&cfg)?;
    let dir = out_dir(&cfg)?;
    let mut manifest = start("loo-oracle", argv, &cfg)?;
    let d = load_data(&a.data.data, &cfg, &mut manifest)?;
    let opts = LooOptions {
        allow_large: a.allow_large,
        gamma: cfg.gamma(),
        ..LooOptions::default()
    };
    let t = Instant::now();
    let (records, summary) =
        oracle::run_correlation_experiment(&d.train, &d.val, Some(&d.test), &cfg.train_cfg(), kind, &opts)?;
    manifest.timings.insert("loo".into(), t.elapsed().as_secs_f64());
    io::write_atomic(&dir.join("loo.csv"), oracle::loo_csv(&records, kind)?.as_bytes())?;
    io::write_json(&dir.join("loo_summary.json"), &summary)?;
    finish(&mut manifest, &dir, &["loo.csv", "loo_summary.json"])
}

fn cmd_bench(a: &BenchArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve(
        &a.common,
        &[a.data.flags(), a.train.flags(), a.metric.flags(), a.unlearn.flags()],
    )?;
    let kind = metric_of(&cfg)?;
    let dir = out_dir(&cfg)?;
    let mut manifest = start("benchmark", argv, &cfg)?;
    let d = load_data(&a.data.data, &cfg, &mut manifest)?;
    let tc = cfg.train_cfg();
    let m = match &a.model {
        Some(p) => load_model_for(p, d.dim, &mut manifest)?,
        None => model::train(&d.train, &tc, &ModelParams::zeros(d.dim))?,
    };
    let ucfg = cfg.unlearn_cfg();
    let setup = BenchSetup {
        model: &m,
        train: &d.train,
        val: &d.val,
        test: &d.test,
        cfg: &ucfg,
        train_cfg: &tc,
        metric_kind: kind,
        gamma: cfg.gamma(),
    };
    let t = Instant::now();
    let out = bench::run_benchmark(&setup, &a.algorithms)?;
    manifest.timings.insert("benchmark".into(), t.elapsed().as_secs_f64());
    for (alg, scheme, msg) in &out.failures {
        warn!("{scheme} {alg} failed: {msg}");
    }
    io::write_atomic(&dir.join("bench.csv"), bench::bench_csv(&out.results)?.as_bytes())?;
    io::write_atomic(&dir.join("sweep.csv"), bench::sweep_csv(&out.sweep)?.as_bytes())?;
    let failures: Vec<_> = out
        .failures
        .iter()
        .map(|(alg, scheme, msg)| json!({"algorithm": alg, "scheme": scheme, "error": msg}))
        .collect();
    io::write_json(
        &dir.join("bench_summary.json"),
        &json!({"metric": kind, "results": out.results, "failures": failures}),
    )?;
    finish(&mut manifest, &dir, &["bench.csv", "sweep.csv", "bench_summary.json"])
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<()> {
    match &cli.command {
        Command::GenSynthetic(a) => cmd_gen(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Influence(a) => cmd_influence(a, argv),
        Command::SolveWeights(a) => cmd_solve(a, argv),
        Command::Unlearn(a) => cmd_unlearn(a, argv),
        Command::LooOracle(a) => cmd_loo(a, argv),
        Command::Benchmark(a) => cmd_bench(a, argv),
    }
}

/// Runs one command; `argv[0]` is the program name. Returns the exit code:
/// 0 success, 1 usage, 2 data, 3 numerical.
pub fn cli_main(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
