//! Evaluation functionals on held-out data and their parameter gradients:
//! utility loss, demographic parity, equal opportunity, and robustness loss
//! on margin-reflected adversarial copies.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Sample, VecAccumulator};
use crate::numeric::{bce_from_logit, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalRole {
    Validation,
    Test,
}

/// Held-out samples used to evaluate a model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    samples: Vec<Sample>,
    role: EvalRole,
}

impl EvalSet {
    pub fn new(samples: Vec<Sample>, role: EvalRole) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySet("evaluation set"));
        }
        Ok(Self { samples, role })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn role(&self) -> EvalRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Perturbed copies of an evaluation set, crafted against a fixed model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSet {
    samples: Vec<Sample>,
    gamma: f64,
    source_model: ModelParams,
}

impl AdversarialSet {
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn source_model(&self) -> &ModelParams {
        &self.source_model
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// The functionals an influence score or a weight problem can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Utility,
    Dp,
    Eop,
    Robustness,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Utility => "utility",
            MetricKind::Dp => "dp",
            MetricKind::Eop => "eop",
            MetricKind::Robustness => "robustness",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "utility" | "util" => Ok(MetricKind::Utility),
            "dp" => Ok(MetricKind::Dp),
            "eop" => Ok(MetricKind::Eop),
            "robustness" | "robust" => Ok(MetricKind::Robustness),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

fn check_dims(samples: &[Sample], m: &ModelParams) -> Result<()> {
    for z in samples {
        m.check_dim(z.dim())?;
    }
    Ok(())
}

fn sum_losses(samples: &[Sample], m: &ModelParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySet("evaluation set"));
    }
    check_dims(samples, m)?;
    let mut acc = CompensatedSum::new();
    for z in samples {
        acc.add(bce_from_logit(m.logit(&z.x), z.label()));
    }
    Ok(acc.value())
}

fn sum_loss_gradients(samples: &[Sample], m: &ModelParams) -> Result<DVector<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySet("evaluation set"));
    }
    check_dims(samples, m)?;
    let mut acc = VecAccumulator::new(m.dim() + 1);
    for z in samples {
        acc.add_augmented(m.predict_proba(&z.x) - z.label(), &z.x);
    }
    Ok(acc.finish())
}

/// `Σ ℓ(z; θ)` over the set, without the ridge term.
pub fn utility_loss(t: &EvalSet, m: &ModelParams) -> Result<f64> {
    sum_losses(t.samples(), m)
}

/// Fraction of samples whose thresholded probability (≥ 0.5) matches the label.
pub fn accuracy(t: &EvalSet, m: &ModelParams) -> Result<f64> {
    check_dims(t.samples(), m)?;
    let hits = t
        .samples()
        .iter()
        .filter(|z| u8::from(m.predict_proba(&z.x) >= 0.5) == z.y)
        .count();
    Ok(hits as f64 / t.len() as f64)
}

struct GroupMean {
    value: CompensatedSum,
    grad: VecAccumulator,
    count: usize,
}

impl GroupMean {
    fn new(len: usize) -> Self {
        Self {
            value: CompensatedSum::new(),
            grad: VecAccumulator::new(len),
            count: 0,
        }
    }
}

/// Group means of a per-sample quantity and its gradient, for groups 0 and 1.
///
/// `per_sample` returns `(value, scale)` where the sample gradient is `scale · (x, 1)`.
fn group_means(
    samples: &[Sample],
    m: &ModelParams,
    include: impl Fn(&Sample) -> bool,
    per_sample: impl Fn(&Sample) -> (f64, f64),
) -> [(f64, DVector<f64>, usize); 2] {
    let mut groups = [GroupMean::new(m.dim() + 1), GroupMean::new(m.dim() + 1)];
    for z in samples.iter().filter(|z| include(z)) {
        let (v, scale) = per_sample(z);
        let gm = &mut groups[usize::from(z.g)];
        gm.value.add(v);
        gm.grad.add_augmented(scale, &z.x);
        gm.count += 1;
    }
    groups.map(|gm| {
        let c = gm.count.max(1) as f64;
        (gm.value.value() / c, gm.grad.finish() / c, gm.count)
    })
}

fn dp_parts(t: &[Sample], m: &ModelParams) -> Result<(f64, DVector<f64>)> {
    if t.is_empty() {
        return Err(Error::EmptySet("evaluation set"));
    }
    check_dims(t, m)?;
    let [g0, g1] = group_means(t, m, |_| true, |z| {
        let p = m.predict_proba(&z.x);
        (p, p * (1.0 - p))
    });
    for (g, part) in [(0u8, &g0), (1, &g1)] {
        if part.2 == 0 {
            return Err(Error::MissingGroup { group: g });
        }
    }
    Ok((g0.0 - g1.0, g0.1 - g1.1))
}

fn eop_parts(t: &[Sample], m: &ModelParams) -> Result<(f64, DVector<f64>)> {
    if t.is_empty() {
        return Err(Error::EmptySet("evaluation set"));
    }
    check_dims(t, m)?;
    let [g0, g1] = group_means(t, m, |z| z.y == 1, |z| {
        let logit = m.logit(&z.x);
        (bce_from_logit(logit, 1.0), m.predict_proba(&z.x) - 1.0)
    });
    for (g, part) in [(0u8, &g0), (1, &g1)] {
        if part.2 == 0 {
            return Err(Error::NoPositives { group: g });
        }
    }
    Ok((g1.0 - g0.0, g1.1 - g0.1))
}

/// `|E[ŷ | g=0] − E[ŷ | g=1]|` with `ŷ` the predicted probability.
pub fn demographic_parity(t: &EvalSet, m: &ModelParams) -> Result<f64> {
    dp_parts(t.samples(), m).map(|(diff, _)| diff.abs())
}

/// `|E[ℓ | g=1, y=1] − E[ℓ | g=0, y=1]|`.
pub fn equal_opportunity(t: &EvalSet, m: &ModelParams) -> Result<f64> {
    eop_parts(t.samples(), m).map(|(diff, _)| diff.abs())
}

/// Moves every sample along `θ` so that `θᵀx̃ + b = (1 − γ)(θᵀx + b)`.
///
/// Labels and sensitive attributes are copied; the input set is untouched.
pub fn craft_adversarial(t: &EvalSet, m: &ModelParams, gamma: f64) -> Result<AdversarialSet> {
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be finite and > 1 (got {gamma})"
        )));
    }
    craft_with_gamma(t, m, gamma)
}

pub(crate) fn craft_with_gamma(t: &EvalSet, m: &ModelParams, gamma: f64) -> Result<AdversarialSet> {
    check_dims(t.samples(), m)?;
    let norm_sq = crate::numeric::dot(&m.theta, &m.theta);
    if norm_sq == 0.0 {
        return Err(Error::ZeroWeights);
    }
    let samples = t
        .samples()
        .iter()
        .map(|z| {
            let c = gamma * m.logit(&z.x) / norm_sq;
            Sample {
                x: z.x.iter().zip(&m.theta).map(|(xi, ti)| xi - c * ti).collect(),
                y: z.y,
                g: z.g,
            }
        })
        .collect();
    Ok(AdversarialSet {
        samples,
        gamma,
        source_model: m.clone(),
    })
}

/// `Σ ℓ(z̃; θ)` over the perturbed samples.
pub fn robustness_loss(adv: &AdversarialSet, m: &ModelParams) -> Result<f64> {
    sum_losses(adv.samples(), m)
}

/// Value of a functional on the given samples (the perturbed ones for
/// [`MetricKind::Robustness`]).
pub fn metric_value(kind: MetricKind, samples: &[Sample], m: &ModelParams) -> Result<f64> {
    match kind {
        MetricKind::Utility | MetricKind::Robustness => sum_losses(samples, m),
        MetricKind::Dp => dp_parts(samples, m).map(|(d, _)| d.abs()),
        MetricKind::Eop => eop_parts(samples, m).map(|(d, _)| d.abs()),
    }
}

/// Gradient of [`metric_value`] with respect to `(θ, b)`.
///
/// DP and EOP use the subgradient `sign(diff)·∇diff`, which is zero when the
/// group difference is exactly zero.
pub fn metric_gradient(kind: MetricKind, samples: &[Sample], m: &ModelParams) -> Result<DVector<f64>> {
    let signed = |(diff, grad): (f64, DVector<f64>)| {
        if diff > 0.0 {
            grad
        } else if diff < 0.0 {
            -grad
        } else {
            DVector::zeros(grad.len())
        }
    };
    match kind {
        MetricKind::Utility | MetricKind::Robustness => sum_loss_gradients(samples, m),
        MetricKind::Dp => dp_parts(samples, m).map(signed),
        MetricKind::Eop => eop_parts(samples, m).map(signed),
    }
}
