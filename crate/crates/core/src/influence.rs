//! Influence of individual training samples on the fitted parameters and on
//! downstream functionals, via one damped-Hessian factorization.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{metric_gradient, AdversarialSet, EvalSet, MetricKind};
use crate::model::{self, HessianFactor, ModelParams, Sample, TrainConfig};
use crate::numeric;

/// A factorized training Hessian bound to the model it was computed at.
#[derive(Debug, Clone)]
pub struct HessianContext {
    model: ModelParams,
    factor: HessianFactor,
    n: usize,
    l2_reg: f64,
}

impl HessianContext {
    /// Checks stationarity of `m` on `train` and factorizes the damped Hessian.
    pub fn new(train: &[Sample], m: &ModelParams, cfg: &TrainConfig) -> Result<Self> {
        let g = model::mean_gradient(train, m, cfg.l2_reg)?;
        let grad_norm = numeric::norm_inf(g.as_slice());
        if !(grad_norm <= cfg.grad_tol) {
            return Err(Error::NotTrained {
                grad_norm,
                tol: cfg.grad_tol,
            });
        }
        let h = model::hessian(train, m, cfg)?;
        Ok(Self {
            model: m.clone(),
            factor: HessianFactor::new(&h)?,
            n: train.len(),
            l2_reg: cfg.l2_reg,
        })
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l2_reg(&self) -> f64 {
        self.l2_reg
    }

    pub fn factor(&self) -> &HessianFactor {
        &self.factor
    }

    /// Errors unless `m` is bit-identical to the snapshot.
    pub fn ensure_snapshot(&self, m: &ModelParams) -> Result<()> {
        if m.fingerprint() == self.model.fingerprint() && *m == self.model {
            Ok(())
        } else {
            Err(Error::StaleWeights)
        }
    }

    /// Predicted `θ̂(z_j; −1) − θ̂ = (1/n)·H⁻¹∇ℓ(z_j; θ̂)`.
    pub fn param_influence(&self, z: &Sample) -> Result<DVector<f64>> {
        let g = model::gradient(z, &self.model, self.l2_reg)?;
        Ok(self.factor.solve(&g) * (1.0 / self.n as f64))
    }
}

/// Parameter influence of training sample `j`.
pub fn influence_param(
    j: usize,
    train: &[Sample],
    m: &ModelParams,
    cfg: &TrainConfig,
) -> Result<DVector<f64>> {
    let z = train
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("index {j} out of range ({})", train.len())))?;
    HessianContext::new(train, m, cfg)?.param_influence(z)
}

/// Per-sample removal influences `𝓘(z_j; −1)` on utility and on one target metric.
#[derive(Debug, Clone)]
pub struct InfluenceTable {
    pub i_util: Vec<f64>,
    pub i_metric: Vec<f64>,
    pub metric_kind: MetricKind,
    context: Arc<HessianContext>,
}

impl InfluenceTable {
    pub fn len(&self) -> usize {
        self.i_util.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_util.is_empty()
    }

    pub fn context(&self) -> &HessianContext {
        &self.context
    }

    pub fn shared_context(&self) -> Arc<HessianContext> {
        Arc::clone(&self.context)
    }

    pub fn model_snapshot(&self) -> &ModelParams {
        &self.context.model
    }

    pub fn rows(&self) -> Vec<InfluenceRow> {
        self.i_util
            .iter()
            .zip(&self.i_metric)
            .enumerate()
            .map(|(index, (&i_util, &i_metric))| InfluenceRow {
                index,
                i_util,
                i_metric,
                metric_kind: self.metric_kind,
            })
            .collect()
    }
}

/// One CSV row of an influence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRow {
    pub index: usize,
    pub i_util: f64,
    pub i_metric: f64,
    pub metric_kind: MetricKind,
}

/// `uᵀ∇ℓ(z; θ)` for every training sample, using `∇ℓ = r·(x, 1) + l2·(θ, 0)`.
fn project_gradients(train: &[Sample], m: &ModelParams, l2_reg: f64, u: &DVector<f64>) -> Vec<f64> {
    let d = m.dim();
    let u_theta = &u.as_slice()[..d];
    let ridge_part = l2_reg * numeric::dot(u_theta, &m.theta);
    train
        .iter()
        .map(|z| {
            let r = m.predict_proba(&z.x) - z.label();
            r * (numeric::dot(u_theta, &z.x) + u[d]) + ridge_part
        })
        .collect()
}

/// Utility and metric influence of every training sample.
///
/// One solve `H⁻¹v` per functional, then one dot product per sample.
/// `adv` is required when `metric_kind` is robustness.
pub fn influence_scores(
    train: &[Sample],
    valset: &EvalSet,
    adv: Option<&AdversarialSet>,
    m: &ModelParams,
    cfg: &TrainConfig,
    metric_kind: MetricKind,
) -> Result<InfluenceTable> {
    let context = Arc::new(HessianContext::new(train, m, cfg)?);
    influence_scores_with(context, train, valset, adv, metric_kind)
}

/// [`influence_scores`] reusing an existing factorization.
pub fn influence_scores_with(
    context: Arc<HessianContext>,
    train: &[Sample],
    valset: &EvalSet,
    adv: Option<&AdversarialSet>,
    metric_kind: MetricKind,
) -> Result<InfluenceTable> {
    if train.len() != context.n {
        return Err(Error::DimensionMismatch {
            expected: context.n,
            got: train.len(),
        });
    }
    let m = &context.model;
    let metric_samples = match metric_kind {
        MetricKind::Utility => {
            return Err(Error::InvalidArgument(
                "the target metric must be dp, eop or robustness".into(),
            ))
        }
        MetricKind::Dp | MetricKind::Eop => valset.samples(),
        MetricKind::Robustness => adv
            .ok_or_else(|| Error::InvalidArgument("robustness influence needs an adversarial set".into()))?
            .samples(),
    };
    let v_util = metric_gradient(MetricKind::Utility, valset.samples(), m)?;
    let v_metric = metric_gradient(metric_kind, metric_samples, m)?;
    let u_util = context.factor.solve(&v_util);
    let u_metric = context.factor.solve(&v_metric);
    let i_util = project_gradients(train, m, context.l2_reg, &u_util);
    let i_metric = project_gradients(train, m, context.l2_reg, &u_metric);
    Ok(InfluenceTable {
        i_util,
        i_metric,
        metric_kind,
        context,
    })
}

/// `𝓘(z; ε) = −ε·𝓘(z; −1)`.
#[inline]
pub fn weighted_influence(eps: f64, i_minus_one: f64) -> f64 {
    -eps * i_minus_one
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{craft_adversarial, EvalRole};
    use crate::model::train as fit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let g = (i % 2) as u8;
                let x: Vec<f64> = (0..d)
                    .map(|k| rng.random_range(-1.0..1.0) + if k == 0 { f64::from(g) * 0.8 } else { 0.0 })
                    .collect();
                let p = crate::numeric::sigmoid(x[0] - 0.5 * x.get(1).copied().unwrap_or(0.0));
                let y = if i < 4 { (i / 2) as u8 } else { u8::from(rng.random_bool(p)) };
                Sample::new(x, y, g).unwrap()
            })
            .collect()
    }

    fn setup(seed: u64, n: usize, d: usize) -> (Vec<Sample>, EvalSet, ModelParams, TrainConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = dataset(&mut rng, n, d);
        let val = EvalSet::new(dataset(&mut rng, 40, d), EvalRole::Validation).unwrap();
        let cfg = TrainConfig::default();
        let m = fit(&train, &cfg, &ModelParams::zeros(d)).unwrap();
        (train, val, m, cfg)
    }

    #[test]
    fn weighted_influence_identities() {
        assert_eq!(weighted_influence(0.0, 3.0), 0.0);
        assert_eq!(weighted_influence(-1.0, 2.5), 2.5);
        assert_eq!(weighted_influence(0.5, 2.0), -1.0);
        for a in [-3.0, 0.25, 7.0] {
            assert!((weighted_influence(a * 0.3, 1.7) - a * weighted_influence(0.3, 1.7)).abs() < 1e-14);
        }
    }

    #[test]
    fn untrained_model_is_rejected() {
        let (train, _, _, cfg) = setup(1, 30, 2);
        assert!(matches!(
            influence_param(0, &train, &ModelParams::zeros(2), &cfg),
            Err(Error::NotTrained { .. })
        ));
    }

    fn saturated(m: &ModelParams, logit: f64, y: u8, g: u8) -> Sample {
        // x = c·θ/‖θ‖² shifted so that θᵀx + b = logit
        let nsq = crate::numeric::dot(&m.theta, &m.theta);
        let c = (logit - m.intercept) / nsq;
        Sample::new(m.theta.iter().map(|t| c * t).collect(), y, g).unwrap()
    }

    #[test]
    fn zero_gradient_sample_has_zero_influence() {
        let (train, _, _, cfg) = setup(2, 30, 2);
        let cfg0 = TrainConfig { l2_reg: 0.0, ..cfg };
        let m0 = fit(&train, &cfg0, &ModelParams::zeros(2)).unwrap();
        let ctx = HessianContext::new(&train, &m0, &cfg0).unwrap();
        let z = saturated(&m0, 800.0, 1, 0);
        assert!(ctx.param_influence(&z).unwrap().iter().all(|v| *v == 0.0));
        assert!(ctx.param_influence(&train[0]).unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn duplicated_data_halves_param_influence() {
        let (train, _, m, cfg) = setup(3, 30, 2);
        let doubled: Vec<Sample> = train.iter().chain(train.iter()).cloned().collect();
        let m2 = fit(&doubled, &cfg, &m).unwrap();
        let a = influence_param(4, &train, &m, &cfg).unwrap();
        let b = influence_param(4, &doubled, &m2, &cfg).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - 2.0 * y).abs() <= 1e-7 * x.abs().max(1e-6), "{x} vs 2*{y}");
        }
    }

    #[test]
    fn zero_validation_gradient_gives_zero_table() {
        let (train, _, m, cfg) = setup(4, 30, 2);
        let val = EvalSet::new(
            vec![
                saturated(&m, 800.0, 1, 0),
                saturated(&m, -800.0, 0, 1),
                saturated(&m, 900.0, 1, 1),
                saturated(&m, -900.0, 0, 0),
            ],
            EvalRole::Validation,
        )
        .unwrap();
        let table = influence_scores(&train, &val, None, &m, &cfg, MetricKind::Dp).unwrap();
        assert!(table.i_util.iter().chain(&table.i_metric).all(|v| *v == 0.0));
    }

    #[test]
    fn negating_metric_direction_negates_scores() {
        let (train, val, m, cfg) = setup(5, 40, 3);
        let ctx = HessianContext::new(&train, &m, &cfg).unwrap();
        let v = metric_gradient(MetricKind::Dp, val.samples(), &m).unwrap();
        let a = project_gradients(&train, &m, cfg.l2_reg, &ctx.factor().solve(&v));
        let b = project_gradients(&train, &m, cfg.l2_reg, &ctx.factor().solve(&-v));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn one_solve_equals_per_sample_solves() {
        let (train, val, m, cfg) = setup(6, 50, 3);
        let adv = craft_adversarial(&val, &m, 1.5).unwrap();
        for kind in [MetricKind::Dp, MetricKind::Eop, MetricKind::Robustness] {
            let table = influence_scores(&train, &val, Some(&adv), &m, &cfg, kind).unwrap();
            assert_eq!(table.len(), train.len());
            let samples = if kind == MetricKind::Robustness { adv.samples() } else { val.samples() };
            let v = metric_gradient(kind, samples, &m).unwrap();
            let vu = metric_gradient(MetricKind::Utility, val.samples(), &m).unwrap();
            for (j, z) in train.iter().enumerate() {
                let g = model::gradient(z, &m, cfg.l2_reg).unwrap();
                let right = table.context().factor().solve(&g);
                let expect_m = v.dot(&right);
                let expect_u = vu.dot(&right);
                assert!((table.i_metric[j] - expect_m).abs() <= 1e-8 * (1.0 + expect_m.abs()));
                assert!((table.i_util[j] - expect_u).abs() <= 1e-8 * (1.0 + expect_u.abs()));
            }
            // recomputation is bit-identical
            let again = influence_scores(&train, &val, Some(&adv), &m, &cfg, kind).unwrap();
            assert_eq!(table.i_metric, again.i_metric);
            assert_eq!(table.i_util, again.i_util);
        }
    }

    #[test]
    fn robustness_needs_adversarial_set_and_utility_is_not_a_target() {
        let (train, val, m, cfg) = setup(7, 30, 2);
        assert!(influence_scores(&train, &val, None, &m, &cfg, MetricKind::Robustness).is_err());
        assert!(influence_scores(&train, &val, None, &m, &cfg, MetricKind::Utility).is_err());
    }
}
