//! Hard-vs-soft comparison under a shared budget, plus the deletion-rate sweep.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EvalSet, MetricKind};
use crate::model::{ModelParams, Sample, TrainConfig};
use crate::numeric::fmt_f64;
use crate::unlearn::{run_framework, Method, UnlearnConfig, UnlearnReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Hard,
    Soft,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Hard => "hard",
            Scheme::Soft => "soft",
        })
    }
}

/// Correction family; each has a hard and a soft variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Influence-function (Newton) update.
    If,
    /// Gradient ascent / fine-tuning rounds.
    GaFt,
}

impl Algorithm {
    pub fn method(self, scheme: Scheme) -> Method {
        match (self, scheme) {
            (Algorithm::If, Scheme::Hard) => Method::HardIf,
            (Algorithm::If, Scheme::Soft) => Method::SoftIf,
            (Algorithm::GaFt, Scheme::Hard) => Method::HardGaFt,
            (Algorithm::GaFt, Scheme::Soft) => Method::SoftGd,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::If => "if",
            Algorithm::GaFt => "ga_ft",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub scheme: Scheme,
    pub algorithm: Algorithm,
    pub metric_kind: MetricKind,
    /// Target metric on the test split.
    pub before_metric: f64,
    pub after_metric: f64,
    /// Mean test loss.
    pub before_util: f64,
    pub after_util: f64,
    /// Metric and utility both improved.
    pub free_lunch: bool,
}

impl BenchResult {
    fn from_report(scheme: Scheme, algorithm: Algorithm, r: &UnlearnReport) -> Result<Self> {
        let get = |s: &crate::unlearn::MetricSnapshot| {
            s.get(r.metric_kind).ok_or(Error::NoPositives { group: 0 })
        };
        let (before_metric, after_metric) = (get(&r.before)?, get(&r.after)?);
        let (before_util, after_util) = (r.before.mean_test_loss, r.after.mean_test_loss);
        Ok(Self {
            scheme,
            algorithm,
            metric_kind: r.metric_kind,
            before_metric,
            after_metric,
            before_util,
            after_util,
            free_lunch: after_metric < before_metric && after_util < before_util,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub rate: f64,
    pub before_metric: f64,
    pub after_metric: f64,
    /// `before_metric − after_metric`.
    pub gain: f64,
    pub after_util: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub results: Vec<BenchResult>,
    pub sweep: Vec<SweepRow>,
    /// Algorithms that failed, with the error text; their rows are missing.
    pub failures: Vec<(Algorithm, Scheme, String)>,
}

/// Removal rates of the sweep: 0% to 30% in 5% steps.
pub fn sweep_rates() -> Vec<f64> {
    (0..=6).map(|k| f64::from(k) * 0.05).collect()
}

/// The data and settings every run of a benchmark shares.
pub struct BenchSetup<'a> {
    pub model: &'a ModelParams,
    pub train: &'a [Sample],
    pub val: &'a EvalSet,
    pub test: &'a EvalSet,
    pub cfg: &'a UnlearnConfig,
    pub train_cfg: &'a TrainConfig,
    pub metric_kind: MetricKind,
    pub gamma: f64,
}

impl BenchSetup<'_> {
    pub fn run(&self, method: Method, fraction: f64) -> Result<UnlearnReport> {
        let cfg = UnlearnConfig {
            method,
            hard_removal_fraction: fraction,
            ..self.cfg.clone()
        };
        // identical budgets: only the method and removal rate may differ
        assert!(cfg.epochs == self.cfg.epochs && cfg.lr_descent == self.cfg.lr_descent && cfg.lr_ascent == self.cfg.lr_ascent);
        run_framework(
            self.model,
            self.train,
            self.val,
            self.test,
            &cfg,
            self.train_cfg,
            self.metric_kind,
            self.gamma,
        )
        .map(|o| o.report)
    }
}

/// Hard and soft variant of every algorithm, then the hard deletion sweep.
pub fn run_benchmark(setup: &BenchSetup<'_>, algorithms: &[Algorithm]) -> Result<BenchOutput> {
    let mut out = BenchOutput {
        results: Vec::new(),
        sweep: Vec::new(),
        failures: Vec::new(),
    };
    for &alg in algorithms {
        for scheme in [Scheme::Hard, Scheme::Soft] {
            let r = setup
                .run(alg.method(scheme), setup.cfg.hard_removal_fraction)
                .and_then(|r| BenchResult::from_report(scheme, alg, &r));
            match r {
                Ok(res) => out.results.push(res),
                Err(e) => out.failures.push((alg, scheme, e.to_string())),
            }
        }
        for rate in sweep_rates() {
            let r = setup
                .run(alg.method(Scheme::Hard), rate)
                .and_then(|r| BenchResult::from_report(Scheme::Hard, alg, &r));
            match r {
                Ok(res) => out.sweep.push(SweepRow {
                    algorithm: alg,
                    rate,
                    before_metric: res.before_metric,
                    after_metric: res.after_metric,
                    gain: res.before_metric - res.after_metric,
                    after_util: res.after_util,
                }),
                Err(e) => out.failures.push((alg, Scheme::Hard, format!("rate {rate}: {e}"))),
            }
        }
    }
    Ok(out)
}

pub fn bench_csv(results: &[BenchResult]) -> Result<String> {
    crate::io::csv_payload(
        crate::io::SchemaKind::Bench,
        &[],
        &["scheme", "algorithm", "before_metric", "after_metric", "before_util", "after_util", "free_lunch"],
        results.iter().map(|r| {
            vec![
                r.scheme.to_string(),
                r.algorithm.to_string(),
                fmt_f64(r.before_metric),
                fmt_f64(r.after_metric),
                fmt_f64(r.before_util),
                fmt_f64(r.after_util),
                r.free_lunch.to_string(),
            ]
        }),
    )
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    crate::io::csv_payload(
        crate::io::SchemaKind::Sweep,
        &[],
        &["algorithm", "rate", "before_metric", "after_metric", "gain", "after_util"],
        rows.iter().map(|r| {
            vec![
                r.algorithm.to_string(),
                format!("{:.2}", r.rate),
                fmt_f64(r.before_metric),
                fmt_f64(r.after_metric),
                fmt_f64(r.gain),
                fmt_f64(r.after_util),
            ]
        }),
    )
}
