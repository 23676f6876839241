//! Retraining oracles: leave-one-out and weighted ERM, and the
//! estimated-vs-actual correlation experiment built on them.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::influence_scores;
use crate::metrics::{self, craft_adversarial, AdversarialSet, EvalSet, MetricKind};
use crate::model::{self, ModelParams, Sample, TrainConfig};
use crate::stats::{pearson, spearman};

/// Default upper bound on the training size for a full LOO sweep.
pub const LOO_CAP: usize = 2000;
/// Changes smaller than this count as "no change" when classifying signs.
pub const DEAD_BAND: f64 = 1e-12;

fn tight(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        grad_tol: cfg.grad_tol / 10.0,
        ..*cfg
    }
}

/// Minimizer over the training set without sample `j`.
pub fn loo_retrain(train: &[Sample], j: usize, cfg: &TrainConfig, warm_start: &ModelParams) -> Result<ModelParams> {
    if train.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs n >= 2".into()));
    }
    if j >= train.len() {
        return Err(Error::InvalidArgument(format!("index {j} out of range ({})", train.len())));
    }
    let rest: Vec<Sample> = train
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(_, z)| z.clone())
        .collect();
    model::train(&rest, &tight(cfg), warm_start)
}

/// Minimizer of `(1/n)·Σ (1 + εᵢ)·ℓ(zᵢ; θ)`.
pub fn weighted_retrain(train: &[Sample], eps: &[f64], cfg: &TrainConfig, init: &ModelParams) -> Result<ModelParams> {
    if eps.len() != train.len() {
        return Err(Error::DimensionMismatch {
            expected: train.len(),
            got: eps.len(),
        });
    }
    let weights: Vec<f64> = eps.iter().map(|e| 1.0 + e).collect();
    if let Some(i) = weights.iter().position(|&w| w < 0.0) {
        warn!("negative effective weight at sample {i} ({:.3e}); solving anyway", weights[i]);
    }
    let c = tight(cfg);
    model::train_weighted(train, &weights, &c, init, c.grad_tol)
}

/// Estimated and actual change of utility and one metric when a single
/// training sample is removed. Estimates are first-order predictions in the
/// same units as the actual changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRecord {
    pub index: usize,
    pub actual_delta_util: f64,
    pub actual_delta_metric: f64,
    pub est_util: f64,
    pub est_metric: f64,
    pub test_delta_util: Option<f64>,
    pub test_delta_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n: usize,
    pub metric_kind: MetricKind,
    pub pearson_util: f64,
    pub spearman_util: f64,
    pub pearson_metric: f64,
    pub spearman_metric: f64,
    /// Spearman between the actual utility and metric changes (validation).
    pub spearman_util_vs_metric: f64,
    pub spearman_util_vs_metric_test: Option<f64>,
    /// Removals that lower the metric but raise the utility loss.
    pub conflicting_removals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LooOptions {
    pub cap: usize,
    pub allow_large: bool,
    pub gamma: f64,
}

impl Default for LooOptions {
    fn default() -> Self {
        Self {
            cap: LOO_CAP,
            allow_large: false,
            gamma: 1.5,
        }
    }
}

struct Probe<'a> {
    kind: MetricKind,
    set: &'a EvalSet,
    adv: &'a AdversarialSet,
}

impl Probe<'_> {
    fn util(&self, m: &ModelParams) -> Result<f64> {
        metrics::utility_loss(self.set, m)
    }

    fn metric(&self, m: &ModelParams) -> Result<f64> {
        match self.kind {
            MetricKind::Robustness => metrics::robustness_loss(self.adv, m),
            k => metrics::metric_value(k, self.set.samples(), m),
        }
    }
}

/// Full leave-one-out sweep against influence estimates.
///
/// Retrains in parallel; records come back ordered by index.
pub fn run_correlation_experiment(
    train: &[Sample],
    val: &EvalSet,
    test: Option<&EvalSet>,
    cfg: &TrainConfig,
    metric_kind: MetricKind,
    opts: &LooOptions,
) -> Result<(Vec<LooRecord>, CorrelationSummary)> {
    let n = train.len();
    if n > opts.cap && !opts.allow_large {
        return Err(Error::LooCapExceeded { n, cap: opts.cap });
    }
    if metric_kind == MetricKind::Utility {
        return Err(Error::InvalidArgument("the target metric must be dp, eop or robustness".into()));
    }
    let d = train.first().ok_or(Error::EmptySet("training set"))?.dim();
    let base = model::train(train, &tight(cfg), &ModelParams::zeros(d))?;
    let adv_val = craft_adversarial(val, &base, opts.gamma)?;
    let table = influence_scores(train, val, Some(&adv_val), &base, cfg, metric_kind)?;

    let pv = Probe { kind: metric_kind, set: val, adv: &adv_val };
    let adv_test = test.map(|t| craft_adversarial(t, &base, opts.gamma)).transpose()?;
    let pt = test.zip(adv_test.as_ref()).map(|(set, adv)| Probe { kind: metric_kind, set, adv });
    let (u0, f0) = (pv.util(&base)?, pv.metric(&base)?);
    let test0 = pt.as_ref().map(|p| Ok::<_, Error>((p.util(&base)?, p.metric(&base)?))).transpose()?;

    let inv_n = 1.0 / n as f64;
    let records = (0..n)
        .into_par_iter()
        .map(|j| {
            let m = loo_retrain(train, j, cfg, &base)?;
            let test_deltas = match (&pt, test0) {
                (Some(p), Some((tu, tf))) => Some((p.util(&m)? - tu, p.metric(&m)? - tf)),
                _ => None,
            };
            Ok(LooRecord {
                index: j,
                actual_delta_util: pv.util(&m)? - u0,
                actual_delta_metric: pv.metric(&m)? - f0,
                est_util: table.i_util[j] * inv_n,
                est_metric: table.i_metric[j] * inv_n,
                test_delta_util: test_deltas.map(|t| t.0),
                test_delta_metric: test_deltas.map(|t| t.1),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let col = |f: fn(&LooRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let (au, am) = (col(|r| r.actual_delta_util), col(|r| r.actual_delta_metric));
    let (eu, em) = (col(|r| r.est_util), col(|r| r.est_metric));
    let test_cross = if test.is_some() {
        let tu: Vec<f64> = records.iter().filter_map(|r| r.test_delta_util).collect();
        let tm: Vec<f64> = records.iter().filter_map(|r| r.test_delta_metric).collect();
        Some(spearman(&tu, &tm)?)
    } else {
        None
    };
    let summary = CorrelationSummary {
        n,
        metric_kind,
        pearson_util: pearson(&eu, &au)?,
        spearman_util: spearman(&eu, &au)?,
        pearson_metric: pearson(&em, &am)?,
        spearman_metric: spearman(&em, &am)?,
        spearman_util_vs_metric: spearman(&au, &am)?,
        spearman_util_vs_metric_test: test_cross,
        conflicting_removals: records
            .iter()
            .filter(|r| r.actual_delta_metric < -DEAD_BAND && r.actual_delta_util > DEAD_BAND)
            .count(),
    };
    Ok((records, summary))
}

pub fn loo_csv(records: &[LooRecord], kind: MetricKind) -> Result<String> {
    let opt = |v: Option<f64>| v.map(crate::numeric::fmt_f64).unwrap_or_default();
    crate::io::csv_payload(
        crate::io::SchemaKind::Loo,
        &[("metric", kind.to_string())],
        &[
            "index",
            "actual_delta_util",
            "actual_delta_metric",
            "est_util",
            "est_metric",
            "test_delta_util",
            "test_delta_metric",
        ],
        records.iter().map(|r| {
            vec![
                r.index.to_string(),
                crate::numeric::fmt_f64(r.actual_delta_util),
                crate::numeric::fmt_f64(r.actual_delta_metric),
                crate::numeric::fmt_f64(r.est_util),
                crate::numeric::fmt_f64(r.est_metric),
                opt(r.test_delta_util),
                opt(r.test_delta_metric),
            ]
        }),
    )
}
