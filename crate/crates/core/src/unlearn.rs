//! Model correction with per-sample weights, and the three-step pipeline
//! (evaluate → optimize → correct) that ties influence, weights and updates
//! together.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{influence_scores_with, HessianContext, InfluenceTable};
use crate::metrics::{
    self, craft_adversarial, AdversarialSet, EvalRole, EvalSet, MetricKind,
};
use crate::model::{self, ModelParams, Sample, TrainConfig, VecAccumulator};
use crate::numeric::dot;
use crate::qp::{self, QpInstance, WeightSource, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SoftIf,
    SoftGd,
    HardIf,
    HardGaFt,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SoftIf, Method::SoftGd, Method::HardIf, Method::HardGaFt];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SoftIf => "soft_if",
            Method::SoftGd => "soft_gd",
            Method::HardIf => "hard_if",
            Method::HardGaFt => "hard_ga_ft",
        }
    }

    pub fn is_soft(self) -> bool {
        matches!(self, Method::SoftIf | Method::SoftGd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: Method,
    pub epochs: usize,
    pub lr_descent: f64,
    pub lr_ascent: f64,
    /// Correction runs only while the validation metric is above this value.
    pub delta_threshold: f64,
    pub hard_removal_fraction: f64,
    /// Weight penalty of the QP.
    pub lambda: f64,
    /// Over-correction bound in metric units; `None` uses the current metric.
    pub delta: Option<f64>,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            method: Method::SoftIf,
            epochs: 30,
            lr_descent: 0.01,
            lr_ascent: 0.0005,
            delta_threshold: 0.0,
            hard_removal_fraction: 0.2,
            lambda: 1.0,
            delta: None,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        for (name, v) in [("lr_descent", self.lr_descent), ("lr_ascent", self.lr_ascent), ("lambda", self.lambda)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be > 0 (got {v})")));
            }
        }
        if !(0.0..=1.0).contains(&self.hard_removal_fraction) {
            return Err(Error::InvalidArgument(format!(
                "hard_removal_fraction must be in [0, 1] (got {})",
                self.hard_removal_fraction
            )));
        }
        if !self.delta_threshold.is_finite() {
            return Err(Error::InvalidArgument("delta_threshold must be finite".into()));
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::InvalidArgument(format!("delta must be >= 0 (got {d})")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> GradientSchedule {
        GradientSchedule {
            epochs: self.epochs,
            lr_descent: self.lr_descent,
            lr_ascent: self.lr_ascent,
        }
    }
}

/// Learning-rate budget of the gradient rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSchedule {
    pub epochs: usize,
    /// Used for samples with `ε > 0`.
    pub lr_descent: f64,
    /// Used for samples with `ε < 0`.
    pub lr_ascent: f64,
}

fn check_weights(w: &WeightVector, n: usize, m: &ModelParams) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.len() });
    }
    if let Some(fp) = w.snapshot {
        if fp != m.fingerprint() {
            return Err(Error::StaleWeights);
        }
    }
    if w.eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite".into()));
    }
    Ok(())
}

/// Parameter shift `−(1/n)·H⁻¹·Σᵢ εᵢ∇ℓ(zᵢ; θ̂)`.
pub fn weighted_newton_step(
    ctx: &HessianContext,
    eps: &[f64],
    train: &[Sample],
) -> Result<nalgebra::DVector<f64>> {
    if eps.len() != train.len() || train.len() != ctx.n() {
        return Err(Error::DimensionMismatch {
            expected: ctx.n(),
            got: eps.len(),
        });
    }
    let m = ctx.model();
    let mut acc = VecAccumulator::new(m.dim() + 1);
    for (z, &e) in train.iter().zip(eps) {
        if e != 0.0 {
            acc.add_vec(e, &model::gradient(z, m, ctx.l2_reg())?);
        }
    }
    let u = ctx.factor().solve(&acc.finish());
    Ok(u * (-1.0 / ctx.n() as f64))
}

/// Single closed-form weighted Newton correction.
pub fn apply_weighted_newton(
    m: &ModelParams,
    w: &WeightVector,
    ctx: &HessianContext,
    train: &[Sample],
) -> Result<ModelParams> {
    ctx.ensure_snapshot(m)?;
    check_weights(w, train.len(), m)?;
    if w.eps.iter().all(|&e| e == 0.0) {
        return Ok(m.clone());
    }
    Ok(m.shifted(&weighted_newton_step(ctx, &w.eps, train)?))
}

/// Full-batch weighted gradient rounds:
/// `θ ← θ − (1/n)·Σⱼ ηⱼ εⱼ ∇ℓ(zⱼ; θ_t)`, with `ηⱼ` the ascent rate when
/// `εⱼ < 0` and the descent rate otherwise.
///
/// Aborts when the mean training loss exceeds ten times its starting value.
pub fn apply_weighted_gradient(
    m: &ModelParams,
    w: &WeightVector,
    train: &[Sample],
    sched: &GradientSchedule,
    l2_reg: f64,
) -> Result<ModelParams> {
    check_weights(w, train.len(), m)?;
    if sched.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be >= 1".into()));
    }
    if w.eps.iter().all(|&e| e == 0.0) {
        return Ok(m.clone());
    }
    let scaled: Vec<f64> = w
        .eps
        .iter()
        .map(|&e| if e < 0.0 { sched.lr_ascent * e } else { sched.lr_descent * e })
        .collect();
    let n = train.len() as f64;
    let initial = model::mean_loss(train, m, l2_reg)?;
    let mut cur = m.clone();
    for round in 1..=sched.epochs {
        let mut acc = VecAccumulator::new(cur.dim() + 1);
        for (z, &c) in train.iter().zip(&scaled) {
            if c != 0.0 {
                acc.add_vec(c, &model::gradient_unchecked(z, &cur, l2_reg));
            }
        }
        cur = cur.shifted(&(acc.finish() * (-1.0 / n)));
        let loss = model::mean_loss(train, &cur, l2_reg)?;
        if !loss.is_finite() || loss > 10.0 * initial {
            return Err(Error::Diverged { round, loss, initial });
        }
    }
    Ok(cur)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardMode {
    /// `ε = −1` on the forget set, 0 elsewhere.
    IfRemoval,
    /// `ε = −1` on the forget set, `+1` on the retain set.
    GaFt,
}

/// Indices of the `⌊fraction·n⌋` most negative `i_metric` entries.
pub fn forget_set(i_metric: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction must be in [0, 1] (got {fraction})")));
    }
    let k = (fraction * i_metric.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..i_metric.len()).collect();
    order.sort_by(|&a, &b| i_metric[a].total_cmp(&i_metric[b]));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Hard (0/±1) weight pattern from the metric influences.
pub fn hard_weights(it: &InfluenceTable, mode: HardMode, fraction: f64) -> Result<WeightVector> {
    Ok(hard_weights_from(&it.i_metric, mode, fraction)?.with_snapshot(it.model_snapshot().fingerprint()))
}

/// [`hard_weights`] from a bare influence vector; no model snapshot.
pub fn hard_weights_from(i_metric: &[f64], mode: HardMode, fraction: f64) -> Result<WeightVector> {
    let forget = forget_set(i_metric, fraction)?;
    let rest = match mode {
        HardMode::IfRemoval => 0.0,
        HardMode::GaFt => 1.0,
    };
    let mut eps = vec![rest; i_metric.len()];
    for i in forget {
        eps[i] = -1.0;
    }
    Ok(WeightVector {
        eps,
        case: None,
        dual_beta1: 0.0,
        dual_beta2: 0.0,
        source: WeightSource::Hard,
        snapshot: None,
        diagnostic: None,
    })
}

/// Test-split measurements of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub mean_test_loss: f64,
    pub utility_loss: f64,
    pub test_accuracy: f64,
    pub dp: f64,
    pub eop: Option<f64>,
    /// Loss on the frozen test-split adversarial set.
    pub robustness_loss: f64,
}

impl MetricSnapshot {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Utility => Some(self.mean_test_loss),
            MetricKind::Dp => Some(self.dp),
            MetricKind::Eop => self.eop,
            MetricKind::Robustness => Some(self.robustness_loss),
        }
    }
}

/// Fixed evaluation material: test split plus adversarial sets crafted once
/// from the pre-correction model.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub test: EvalSet,
    pub adv_test: AdversarialSet,
    pub adv_val: AdversarialSet,
}

impl Evaluator {
    pub fn new(val: &EvalSet, test: &EvalSet, m: &ModelParams, gamma: f64) -> Result<Self> {
        Ok(Self {
            test: test.clone(),
            adv_test: craft_adversarial(test, m, gamma)?,
            adv_val: craft_adversarial(val, m, gamma)?,
        })
    }

    pub fn measure(&self, m: &ModelParams) -> Result<MetricSnapshot> {
        let utility_loss = metrics::utility_loss(&self.test, m)?;
        let eop = match metrics::equal_opportunity(&self.test, m) {
            Ok(v) => Some(v),
            Err(Error::NoPositives { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricSnapshot {
            mean_test_loss: utility_loss / self.test.len() as f64,
            utility_loss,
            test_accuracy: metrics::accuracy(&self.test, m)?,
            dp: metrics::demographic_parity(&self.test, m)?,
            eop,
            robustness_loss: metrics::robustness_loss(&self.adv_test, m)?,
        })
    }

    /// The target metric on the validation split.
    pub fn validation_metric(&self, kind: MetricKind, val: &EvalSet, m: &ModelParams) -> Result<f64> {
        match kind {
            MetricKind::Robustness => metrics::robustness_loss(&self.adv_val, m),
            _ => metrics::metric_value(kind, val.samples(), m),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRuntimes {
    pub evaluate: f64,
    pub optimize: f64,
    /// Part of `optimize` spent inside the QP solver.
    pub solve: f64,
    /// Correction plus re-measuring the updated model.
    pub correct: f64,
}

impl StepRuntimes {
    pub fn total(&self) -> f64 {
        self.evaluate + self.optimize + self.correct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub method: Method,
    pub metric_kind: MetricKind,
    pub before: MetricSnapshot,
    pub after: MetricSnapshot,
    pub val_metric_before: f64,
    pub val_metric_after: f64,
    /// False when the δ-gate skipped the correction.
    pub corrected: bool,
    pub delta_threshold: f64,
    /// QP bound `Δ` in metric units (soft methods).
    pub qp_delta: Option<f64>,
    pub lambda: Option<f64>,
    /// Number of samples per KKT case id (0 for hard patterns).
    pub case_histogram: BTreeMap<u8, usize>,
    pub dual_beta1: Option<f64>,
    pub dual_beta2: Option<f64>,
    /// First-order utility change `Σᵢ 𝓘_util(zᵢ; εᵢ)`.
    pub linearized_util_change: f64,
    /// First-order change of the validation metric, `−(1/n)·εᵀ𝓘_metric`.
    pub predicted_metric_change: f64,
    pub weights_l1: f64,
    pub diagnostic: Option<String>,
    /// Wall-clock seconds per step; kept out of serialized payloads.
    #[serde(skip)]
    pub step_runtimes: StepRuntimes,
}

/// Everything produced by one run of the pipeline.
#[derive(Debug, Clone)]
pub struct FrameworkOutput {
    pub report: UnlearnReport,
    pub model: ModelParams,
    pub weights: Option<WeightVector>,
    pub influence: Option<InfluenceTable>,
}

pub fn case_histogram(w: &WeightVector) -> BTreeMap<u8, usize> {
    let mut h = BTreeMap::new();
    *h.entry(w.case_id()).or_insert(0) += w.len();
    h
}

/// Soft weights for a table: solves the QP with `Δ` scaled to influence units.
/// Rescales λ by `‖I_metric‖∞ / 2`, so that at λ = 1 the unconstrained
/// weights satisfy `|εᵢ| ≤ 1` whatever the units of the metric.
pub fn effective_lambda(i_metric: &[f64], lambda: f64) -> f64 {
    let s = crate::numeric::norm_inf(i_metric) / 2.0;
    if s > 0.0 && s.is_finite() {
        lambda * s
    } else {
        lambda
    }
}

/// The QP behind [`soft_weights`]: the metric bound is scaled by `n` to match
/// the unnormalized influence scalars.
pub fn soft_qp(it: &InfluenceTable, lambda: f64, delta_metric: f64) -> Result<QpInstance> {
    soft_qp_from(it.i_metric.clone(), it.i_util.clone(), lambda, delta_metric)
}

/// [`soft_qp`] from bare influence vectors.
pub fn soft_qp_from(i_metric: Vec<f64>, i_util: Vec<f64>, lambda: f64, delta_metric: f64) -> Result<QpInstance> {
    let lambda = effective_lambda(&i_metric, lambda);
    let delta = delta_metric * i_metric.len() as f64;
    QpInstance::new(i_metric, i_util, lambda, delta)
}

pub fn soft_weights(it: &InfluenceTable, lambda: f64, delta_metric: f64) -> Result<WeightVector> {
    let q = soft_qp(it, lambda, delta_metric)?;
    Ok(qp::solve_analytic(&q)?.with_snapshot(it.model_snapshot().fingerprint()))
}

/// Applies the correction step of `method` to a model.
pub fn correct(
    method: Method,
    m: &ModelParams,
    w: &WeightVector,
    ctx: &HessianContext,
    train: &[Sample],
    cfg: &UnlearnConfig,
) -> Result<ModelParams> {
    let sched = cfg.schedule();
    match method {
        Method::SoftIf | Method::HardIf => apply_weighted_newton(m, w, ctx, train),
        Method::SoftGd => apply_weighted_gradient(m, w, train, &sched, ctx.l2_reg()),
        Method::HardGaFt => {
            // ascent on the forget set, then fine-tuning on the retain set
            let ascent_epochs = cfg.epochs / 2;
            let keep = |pred: fn(f64) -> bool| WeightVector {
                eps: w.eps.iter().map(|&e| if pred(e) { e } else { 0.0 }).collect(),
                ..w.clone()
            };
            let mut cur = m.clone();
            if ascent_epochs > 0 {
                let s = GradientSchedule { epochs: ascent_epochs, ..sched };
                cur = apply_weighted_gradient(&cur, &keep(|e| e < 0.0), train, &s, ctx.l2_reg())?;
            }
            let s = GradientSchedule {
                epochs: cfg.epochs - ascent_epochs,
                ..sched
            };
            let mut ft = keep(|e| e > 0.0);
            ft.snapshot = None;
            apply_weighted_gradient(&cur, &ft, train, &s, ctx.l2_reg())
        }
    }
}

/// Runs evaluate → optimize → correct on a trained model.
///
/// The correction is applied only when the validation metric exceeds
/// `cfg.delta_threshold`. Before/after metrics are measured on the test split.
#[allow(clippy::too_many_arguments)]
pub fn run_framework(
    m: &ModelParams,
    train: &[Sample],
    val: &EvalSet,
    test: &EvalSet,
    cfg: &UnlearnConfig,
    train_cfg: &TrainConfig,
    metric_kind: MetricKind,
    gamma: f64,
) -> Result<FrameworkOutput> {
    cfg.validate()?;
    train_cfg.validate()?;
    if val.role() != EvalRole::Validation || test.role() != EvalRole::Test {
        return Err(Error::InvalidArgument("evaluation sets have the wrong roles".into()));
    }

    let t0 = Instant::now();
    let ev = Evaluator::new(val, test, m, gamma).map_err(Error::in_step("evaluate"))?;
    let before = ev.measure(m).map_err(Error::in_step("evaluate"))?;
    let val_metric_before = ev
        .validation_metric(metric_kind, val, m)
        .map_err(Error::in_step("evaluate"))?;
    let ctx = Arc::new(HessianContext::new(train, m, train_cfg).map_err(Error::in_step("evaluate"))?);
    let table = influence_scores_with(Arc::clone(&ctx), train, val, Some(&ev.adv_val), metric_kind)
        .map_err(Error::in_step("evaluate"))?;
    let evaluate = t0.elapsed().as_secs_f64();

    let mut report = UnlearnReport {
        method: cfg.method,
        metric_kind,
        before,
        after: before,
        val_metric_before,
        val_metric_after: val_metric_before,
        corrected: false,
        delta_threshold: cfg.delta_threshold,
        qp_delta: None,
        lambda: None,
        case_histogram: BTreeMap::new(),
        dual_beta1: None,
        dual_beta2: None,
        linearized_util_change: 0.0,
        predicted_metric_change: 0.0,
        weights_l1: 0.0,
        diagnostic: None,
        step_runtimes: StepRuntimes {
            evaluate,
            ..StepRuntimes::default()
        },
    };

    if !(val_metric_before > cfg.delta_threshold) {
        info!(
            "validation {metric_kind} = {val_metric_before:.6e} <= {}; correction skipped",
            cfg.delta_threshold
        );
        return Ok(FrameworkOutput {
            report,
            model: m.clone(),
            weights: None,
            influence: Some(table),
        });
    }

    let t1 = Instant::now();
    let w = if cfg.method.is_soft() {
        let delta = cfg.delta.unwrap_or(val_metric_before);
        report.qp_delta = Some(delta);
        report.lambda = Some(cfg.lambda);
        soft_qp(&table, cfg.lambda, delta).and_then(|q| {
            let ts = Instant::now();
            let w = qp::solve_analytic(&q);
            report.step_runtimes.solve = ts.elapsed().as_secs_f64();
            Ok(w?.with_snapshot(table.model_snapshot().fingerprint()))
        })
    } else {
        let mode = match cfg.method {
            Method::HardGaFt => HardMode::GaFt,
            _ => HardMode::IfRemoval,
        };
        hard_weights(&table, mode, cfg.hard_removal_fraction)
    }
    .map_err(Error::in_step("optimize"))?;
    report.step_runtimes.optimize = t1.elapsed().as_secs_f64();

    let n = train.len() as f64;
    report.case_histogram = case_histogram(&w);
    if w.source != WeightSource::Hard {
        report.dual_beta1 = Some(w.dual_beta1);
        report.dual_beta2 = Some(w.dual_beta2);
    }
    report.linearized_util_change = -dot(&w.eps, &table.i_util);
    report.predicted_metric_change = -dot(&w.eps, &table.i_metric) / n;
    report.weights_l1 = crate::numeric::sum(w.eps.iter().map(|e| e.abs()));
    report.diagnostic = w.diagnostic.clone();

    let t2 = Instant::now();
    let updated = correct(cfg.method, m, &w, &ctx, train, cfg).map_err(Error::in_step("correct"))?;
    if !updated.is_finite() {
        warn!("correction produced non-finite parameters");
        return Err(Error::in_step("correct")(Error::NoConvergence {
            iters: cfg.epochs,
            grad_norm: f64::NAN,
        }));
    }

    report.after = ev.measure(&updated).map_err(Error::in_step("correct"))?;
    report.val_metric_after = ev
        .validation_metric(metric_kind, val, &updated)
        .map_err(Error::in_step("correct"))?;
    report.step_runtimes.correct = t2.elapsed().as_secs_f64();
    report.corrected = true;
    Ok(FrameworkOutput {
        report,
        model: updated,
        weights: Some(w),
        influence: Some(table),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::{influence_param, influence_scores};
    use crate::model::train as fit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let g = (i % 2) as u8;
                let y = u8::from(rng.random_bool(if g == 1 { 0.7 } else { 0.35 }));
                let mut x: Vec<f64> = (0..d)
                    .map(|_| rng.random_range(-1.0..1.0) + if y == 1 { 0.6 } else { -0.6 })
                    .collect();
                x[0] += shift * f64::from(g);
                Sample::new(x, y, g).unwrap()
            })
            .collect()
    }

    struct Fixture {
        train: Vec<Sample>,
        val: EvalSet,
        test: EvalSet,
        m: ModelParams,
        cfg: TrainConfig,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let train = blob(&mut rng, 120, d, 1.0);
        let val = EvalSet::new(blob(&mut rng, 40, d, 1.0), EvalRole::Validation).unwrap();
        let test = EvalSet::new(blob(&mut rng, 40, d, 1.0), EvalRole::Test).unwrap();
        let cfg = TrainConfig::default();
        let m = fit(&train, &cfg, &ModelParams::zeros(d)).unwrap();
        Fixture { train, val, test, m, cfg }
    }

    fn zero_weights(n: usize) -> WeightVector {
        WeightVector {
            eps: vec![0.0; n],
            case: None,
            dual_beta1: 0.0,
            dual_beta2: 0.0,
            source: WeightSource::Hard,
            snapshot: None,
            diagnostic: None,
        }
    }

    #[test]
    fn zero_weights_leave_the_model_alone() {
        let f = fixture(1);
        let ctx = HessianContext::new(&f.train, &f.m, &f.cfg).unwrap();
        let w = zero_weights(f.train.len());
        assert_eq!(apply_weighted_newton(&f.m, &w, &ctx, &f.train).unwrap(), f.m);
        let sched = GradientSchedule { epochs: 7, lr_descent: 0.1, lr_ascent: 0.1 };
        assert_eq!(apply_weighted_gradient(&f.m, &w, &f.train, &sched, f.cfg.l2_reg).unwrap(), f.m);
    }

    #[test]
    fn one_hot_removal_is_bit_identical_to_param_influence() {
        let f = fixture(2);
        let ctx = HessianContext::new(&f.train, &f.m, &f.cfg).unwrap();
        for j in [0, 17, 119] {
            let mut w = zero_weights(f.train.len());
            w.eps[j] = -1.0;
            let updated = apply_weighted_newton(&f.m, &w, &ctx, &f.train).unwrap();
            let expect = f.m.shifted(&influence_param(j, &f.train, &f.m, &f.cfg).unwrap());
            assert_eq!(updated, expect);
        }
    }

    #[test]
    fn stale_weights_are_rejected() {
        let f = fixture(3);
        let ctx = HessianContext::new(&f.train, &f.m, &f.cfg).unwrap();
        let mut w = zero_weights(f.train.len());
        w.eps[0] = 0.5;
        w.snapshot = Some(f.m.fingerprint() ^ 1);
        assert!(matches!(apply_weighted_newton(&f.m, &w, &ctx, &f.train), Err(Error::StaleWeights)));
        let other = f.m.shifted(&nalgebra::DVector::from_element(f.m.dim() + 1, 1e-3));
        w.snapshot = None;
        assert!(matches!(apply_weighted_newton(&other, &w, &ctx, &f.train), Err(Error::StaleWeights)));
    }

    #[test]
    fn descent_rounds_do_not_increase_training_loss() {
        let f = fixture(4);
        let start = f.m.shifted(&nalgebra::DVector::from_element(f.m.dim() + 1, 0.3));
        let mut w = zero_weights(f.train.len());
        w.eps.iter_mut().for_each(|e| *e = 1.0);
        let sched = GradientSchedule { epochs: 1, lr_descent: 0.05, lr_ascent: 0.05 };
        let mut cur = start;
        let mut prev = model::mean_loss(&f.train, &cur, f.cfg.l2_reg).unwrap();
        for _ in 0..20 {
            cur = apply_weighted_gradient(&cur, &w, &f.train, &sched, f.cfg.l2_reg).unwrap();
            let l = model::mean_loss(&f.train, &cur, f.cfg.l2_reg).unwrap();
            assert!(l <= prev + 1e-15);
            prev = l;
        }
    }

    #[test]
    fn ascent_on_forget_set_raises_its_loss() {
        let f = fixture(5);
        let mut w = zero_weights(f.train.len());
        let forget: Vec<usize> = (0..10).collect();
        for &i in &forget {
            w.eps[i] = -1.0;
        }
        let sched = GradientSchedule { epochs: 1, lr_descent: 0.01, lr_ascent: 0.01 };
        let after = apply_weighted_gradient(&f.m, &w, &f.train, &sched, f.cfg.l2_reg).unwrap();
        let fl = |m: &ModelParams| -> f64 {
            forget.iter().map(|&i| model::loss(&f.train[i], m, f.cfg.l2_reg).unwrap()).sum()
        };
        assert!(fl(&after) > fl(&f.m));
    }

    #[test]
    fn divergence_guard_trips() {
        let f = fixture(6);
        let mut w = zero_weights(f.train.len());
        w.eps.iter_mut().for_each(|e| *e = -1.0);
        let sched = GradientSchedule { epochs: 500, lr_descent: 1.0, lr_ascent: 50.0 };
        assert!(matches!(
            apply_weighted_gradient(&f.m, &w, &f.train, &sched, f.cfg.l2_reg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn forget_set_picks_most_negative_entries() {
        let vals: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64 - 10.0).collect();
        let got = forget_set(&vals, 0.2).unwrap();
        let mut by_value: Vec<usize> = (0..20).collect();
        by_value.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let mut expect = by_value[..4].to_vec();
        expect.sort_unstable();
        assert_eq!(got, expect);
        assert!(forget_set(&vals, 0.0).unwrap().is_empty());
        assert_eq!(forget_set(&vals, 1.0).unwrap().len(), 20);
        assert!(forget_set(&vals, 1.5).is_err());
    }

    #[test]
    fn hard_patterns() {
        let f = fixture(7);
        let it = influence_scores(&f.train, &f.val, None, &f.m, &f.cfg, MetricKind::Dp).unwrap();
        let all = hard_weights(&it, HardMode::IfRemoval, 1.0).unwrap();
        assert!(all.eps.iter().all(|&e| e == -1.0));
        let none = hard_weights(&it, HardMode::IfRemoval, 0.0).unwrap();
        assert!(none.eps.iter().all(|&e| e == 0.0));
        let keep = hard_weights(&it, HardMode::GaFt, 0.0).unwrap();
        assert!(keep.eps.iter().all(|&e| e == 1.0));
        let gf = hard_weights(&it, HardMode::GaFt, 0.25).unwrap();
        assert_eq!(gf.eps.iter().filter(|&&e| e == -1.0).count(), 30);
    }

    #[test]
    fn framework_soft_if_reduces_validation_dp() {
        let f = fixture(8);
        let cfg = UnlearnConfig::default();
        let out = run_framework(&f.m, &f.train, &f.val, &f.test, &cfg, &f.cfg, MetricKind::Dp, 1.5).unwrap();
        let r = &out.report;
        assert!(r.corrected);
        assert!(r.val_metric_after < r.val_metric_before);
        assert!(r.linearized_util_change <= 1e-9);
        assert!(r.step_runtimes.evaluate >= 0.0 && r.step_runtimes.optimize >= 0.0 && r.step_runtimes.correct >= 0.0);
    }

    #[test]
    fn delta_gate_skips_correction() {
        let f = fixture(9);
        let cfg = UnlearnConfig {
            delta_threshold: 10.0,
            ..UnlearnConfig::default()
        };
        let out = run_framework(&f.m, &f.train, &f.val, &f.test, &cfg, &f.cfg, MetricKind::Dp, 1.5).unwrap();
        assert!(!out.report.corrected);
        assert_eq!(out.model, f.m);
        assert_eq!(out.report.before, out.report.after);
    }

    #[test]
    fn all_methods_run() {
        let f = fixture(10);
        for method in Method::ALL {
            let cfg = UnlearnConfig { method, ..UnlearnConfig::default() };
            let out = run_framework(&f.m, &f.train, &f.val, &f.test, &cfg, &f.cfg, MetricKind::Dp, 1.5).unwrap();
            assert!(out.model.is_finite(), "{method}");
            assert_eq!(out.report.method, method);
        }
        assert_eq!("hard-ga-ft".parse::<Method>().unwrap(), Method::HardGaFt);
    }
}
