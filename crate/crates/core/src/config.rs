//! Run configuration: a flat TOML file whose keys mirror the CLI flags.
//!
//! Precedence, lowest first: built-in defaults, the config file, command-line
//! flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::CsvSchema;
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::model::TrainConfig;
use crate::unlearn::{Method, UnlearnConfig};

pub const DEFAULT_GAMMA: f64 = 1.5;

/// Every field is optional; unset fields fall back to the owning module's
/// default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub metric: Option<MetricKind>,
    pub gamma: Option<f64>,

    pub lambda: Option<f64>,
    pub delta: Option<f64>,

    pub method: Option<Method>,
    pub epochs: Option<usize>,
    pub lr_descent: Option<f64>,
    pub lr_ascent: Option<f64>,
    pub delta_threshold: Option<f64>,
    pub hard_removal_fraction: Option<f64>,

    pub l2_reg: Option<f64>,
    pub damping: Option<f64>,
    pub grad_tol: Option<f64>,
    pub max_iters: Option<usize>,

    pub label_col: Option<String>,
    pub sensitive_col: Option<String>,
    pub split_col: Option<String>,
    pub feature_cols: Option<Vec<String>>,
    pub standardize: Option<bool>,
    pub sensitive_as_feature: Option<bool>,

    pub out: Option<PathBuf>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),* $(,)?) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fields set in `top` win over fields set in `self`.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let base = self;
        overlay_fields!(base, top;
            seed, metric, gamma, lambda, delta, method, epochs, lr_descent, lr_ascent,
            delta_threshold, hard_removal_fraction, l2_reg, damping, grad_tol, max_iters,
            label_col, sensitive_col, split_col, feature_cols, standardize,
            sensitive_as_feature, out,
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(DEFAULT_GAMMA)
    }

    pub fn train_cfg(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            l2_reg: self.l2_reg.unwrap_or(d.l2_reg),
            damping: self.damping.unwrap_or(d.damping),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
        }
    }

    pub fn unlearn_cfg(&self) -> UnlearnConfig {
        let d = UnlearnConfig::default();
        UnlearnConfig {
            method: self.method.unwrap_or(d.method),
            epochs: self.epochs.unwrap_or(d.epochs),
            lr_descent: self.lr_descent.unwrap_or(d.lr_descent),
            lr_ascent: self.lr_ascent.unwrap_or(d.lr_ascent),
            delta_threshold: self.delta_threshold.unwrap_or(d.delta_threshold),
            hard_removal_fraction: self.hard_removal_fraction.unwrap_or(d.hard_removal_fraction),
            lambda: self.lambda.unwrap_or(d.lambda),
            delta: self.delta.or(d.delta),
        }
    }

    pub fn csv_schema(&self) -> CsvSchema {
        let d = CsvSchema::default();
        CsvSchema {
            features: self.feature_cols.clone(),
            label: self.label_col.clone().unwrap_or(d.label),
            sensitive: self.sensitive_col.clone().unwrap_or(d.sensitive),
            split: self.split_col.clone().unwrap_or(d.split),
            split_seed: self.seed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_cfg().validate()?;
        self.unlearn_cfg().validate()?;
        let g = self.gamma();
        if !(g > 1.0) || !g.is_finite() {
            return Err(Error::Config(format!("gamma must be > 1 (got {g})")));
        }
        Ok(())
    }
}
