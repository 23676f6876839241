//! Regularized logistic regression: per-sample loss, gradient, Hessian,
//! damped Hessian solves and (weighted) empirical-risk minimization.
//!
//! Parameters are handled in augmented form `(θ, b)` of length `d + 1`, the
//! intercept last. The ridge term `(l2/2)·‖θ‖²` is part of every per-sample
//! loss and never touches the intercept.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, bce_from_logit, sigmoid, CompensatedSum};

/// One labelled observation with its binary sensitive attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: u8,
    pub g: u8,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: u8, g: u8) -> Result<Self> {
        if y > 1 || g > 1 {
            return Err(Error::InvalidArgument(format!(
                "label and sensitive attribute must be 0 or 1 (got y={y}, g={g})"
            )));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite feature {bad}")));
        }
        Ok(Self { x, y, g })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    #[inline]
    pub fn label(&self) -> f64 {
        f64::from(self.y)
    }
}

/// Linear classifier parameters `θ` and intercept `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    pub intercept: f64,
}

impl ModelParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            theta: vec![0.0; d],
            intercept: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// `θᵀx + b`.
    #[inline]
    pub fn logit(&self, x: &[f64]) -> f64 {
        numeric::dot_short(&self.theta, x) + self.intercept
    }

    #[inline]
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// `(θ, b)` as one vector of length `d + 1`.
    pub fn to_augmented(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(d + 1, |i, _| if i < d { self.theta[i] } else { self.intercept })
    }

    pub fn from_augmented(v: &DVector<f64>) -> Self {
        let d = v.len() - 1;
        Self {
            theta: v.rows(0, d).iter().copied().collect(),
            intercept: v[d],
        }
    }

    /// Adds an augmented step `(Δθ, Δb)`.
    pub fn shifted(&self, step: &DVector<f64>) -> Self {
        debug_assert_eq!(step.len(), self.dim() + 1);
        let d = self.dim();
        Self {
            theta: self.theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect(),
            intercept: self.intercept + step[d],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.theta.iter().all(|t| t.is_finite())
    }

    /// Bit-level identity of the parameter values.
    pub fn fingerprint(&self) -> u64 {
        numeric::fingerprint(self.theta.iter().copied().chain(std::iter::once(self.intercept)))
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: d,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Ridge coefficient on `θ`.
    pub l2_reg: f64,
    /// Added to the Hessian diagonal for influence computations.
    pub damping: f64,
    /// Stationarity threshold on `‖mean gradient‖∞`.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_reg: 1e-3,
            damping: 1e-4,
            grad_tol: 1e-8,
            max_iters: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_reg >= 0.0) || !(self.damping >= 0.0) {
            return Err(Error::InvalidArgument(
                "l2_reg and damping must be nonnegative".into(),
            ));
        }
        if !(self.grad_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "grad_tol must be positive and max_iters at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn ridge_penalty(m: &ModelParams, l2_reg: f64) -> f64 {
    if l2_reg == 0.0 {
        0.0
    } else {
        0.5 * l2_reg * numeric::dot(&m.theta, &m.theta)
    }
}

/// Cross-entropy plus the per-sample ridge share.
pub fn loss(z: &Sample, m: &ModelParams, l2_reg: f64) -> Result<f64> {
    m.check_dim(z.dim())?;
    Ok(bce_from_logit(m.logit(&z.x), z.label()) + ridge_penalty(m, l2_reg))
}

/// Gradient of [`loss`] with respect to `(θ, b)`.
pub fn gradient(z: &Sample, m: &ModelParams, l2_reg: f64) -> Result<DVector<f64>> {
    m.check_dim(z.dim())?;
    Ok(gradient_unchecked(z, m, l2_reg))
}

#[inline]
pub(crate) fn gradient_unchecked(z: &Sample, m: &ModelParams, l2_reg: f64) -> DVector<f64> {
    let d = z.dim();
    let r = m.predict_proba(&z.x) - z.label();
    DVector::from_fn(d + 1, |i, _| {
        if i < d {
            r * z.x[i] + l2_reg * m.theta[i]
        } else {
            r
        }
    })
}

fn check_samples(samples: &[Sample], m: &ModelParams) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptySet("training samples"));
    }
    for z in samples {
        m.check_dim(z.dim())?;
    }
    Ok(())
}

/// Per-coordinate compensated accumulator for augmented vectors.
pub(crate) struct VecAccumulator {
    parts: Vec<CompensatedSum>,
}

impl VecAccumulator {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            parts: vec![CompensatedSum::new(); len],
        }
    }

    /// Adds `scale · (x, 1)` to the first `d + 1` slots.
    #[inline]
    pub(crate) fn add_augmented(&mut self, scale: f64, x: &[f64]) {
        let d = x.len();
        for (acc, xi) in self.parts[..d].iter_mut().zip(x) {
            acc.add(scale * xi);
        }
        self.parts[d].add(scale);
    }

    pub(crate) fn add_vec(&mut self, scale: f64, v: &DVector<f64>) {
        for (acc, vi) in self.parts.iter_mut().zip(v.iter()) {
            acc.add(scale * vi);
        }
    }

    pub(crate) fn finish(self) -> DVector<f64> {
        DVector::from_iterator(self.parts.len(), self.parts.iter().map(|p| p.value()))
    }
}

/// Weighted empirical objective `(1/norm)·Σ wᵢ ℓ(zᵢ; θ)`.
///
/// `weights = None` means unit weights.
pub(crate) struct WeightedRisk<'a> {
    samples: &'a [Sample],
    weights: Option<&'a [f64]>,
    norm: f64,
    l2_reg: f64,
    weight_total: f64,
}

impl<'a> WeightedRisk<'a> {
    pub(crate) fn new(
        samples: &'a [Sample],
        weights: Option<&'a [f64]>,
        norm: f64,
        l2_reg: f64,
    ) -> Self {
        let weight_total = match weights {
            Some(w) => numeric::sum(w.iter().copied()),
            None => samples.len() as f64,
        };
        Self {
            samples,
            weights,
            norm,
            l2_reg,
            weight_total,
        }
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn value(&self, m: &ModelParams) -> f64 {
        let mut acc = CompensatedSum::new();
        for (i, z) in self.samples.iter().enumerate() {
            let w = self.weight(i);
            if w != 0.0 {
                acc.add(w * bce_from_logit(m.logit(&z.x), z.label()));
            }
        }
        (acc.value() + self.weight_total * ridge_penalty(m, self.l2_reg)) / self.norm
    }

    fn gradient(&self, m: &ModelParams) -> DVector<f64> {
        let d = m.dim();
        let mut acc = VecAccumulator::new(d + 1);
        for (i, z) in self.samples.iter().enumerate() {
            let w = self.weight(i);
            if w != 0.0 {
                acc.add_augmented(w * (m.predict_proba(&z.x) - z.label()), &z.x);
            }
        }
        let mut g = acc.finish();
        for k in 0..d {
            g[k] += self.weight_total * self.l2_reg * m.theta[k];
        }
        g / self.norm
    }

    fn hessian(&self, m: &ModelParams, damping: f64) -> DMatrix<f64> {
        let d = m.dim();
        let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
        let mut xt = DVector::<f64>::zeros(d + 1);
        xt[d] = 1.0;
        for (i, z) in self.samples.iter().enumerate() {
            let w = self.weight(i);
            if w == 0.0 {
                continue;
            }
            let p = m.predict_proba(&z.x);
            let c = w * p * (1.0 - p);
            if c == 0.0 {
                continue;
            }
            xt.rows_mut(0, d).copy_from_slice(&z.x);
            h.syger(c, &xt, &xt, 1.0);
        }
        h.fill_upper_triangle_with_lower_triangle();
        h /= self.norm;
        let ridge = self.weight_total * self.l2_reg / self.norm;
        for k in 0..d {
            h[(k, k)] += ridge;
        }
        for k in 0..=d {
            h[(k, k)] += damping;
        }
        h
    }
}

/// Mean gradient over `samples`, ridge included.
pub fn mean_gradient(samples: &[Sample], m: &ModelParams, l2_reg: f64) -> Result<DVector<f64>> {
    check_samples(samples, m)?;
    Ok(WeightedRisk::new(samples, None, samples.len() as f64, l2_reg).gradient(m))
}

/// Mean training objective (ridge included).
pub fn mean_loss(samples: &[Sample], m: &ModelParams, l2_reg: f64) -> Result<f64> {
    check_samples(samples, m)?;
    Ok(WeightedRisk::new(samples, None, samples.len() as f64, l2_reg).value(m))
}

/// `(1/n)·Σ σᵢ(1-σᵢ)·x̃ᵢx̃ᵢᵀ + l2 on the θ block + damping·I`, with `x̃ = (x, 1)`.
pub fn hessian(samples: &[Sample], m: &ModelParams, cfg: &TrainConfig) -> Result<DMatrix<f64>> {
    check_samples(samples, m)?;
    Ok(WeightedRisk::new(samples, None, samples.len() as f64, cfg.l2_reg).hessian(m, cfg.damping))
}

fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factorization of a (damped) Hessian, reusable across solves.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    chol: Cholesky<f64, Dyn>,
    #[cfg(debug_assertions)]
    matrix: DMatrix<f64>,
}

impl HessianFactor {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::DimensionMismatch {
                expected: h.nrows(),
                got: h.ncols(),
            });
        }
        match Cholesky::new(h.clone()) {
            Some(chol) => Ok(Self {
                chol,
                #[cfg(debug_assertions)]
                matrix: h.clone(),
            }),
            None => Err(Error::NotPositiveDefinite {
                min_eigenvalue: min_eigenvalue(h),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `H⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let u = self.chol.solve(v);
        #[cfg(debug_assertions)]
        {
            let residual = numeric::norm_inf((&self.matrix * &u - v).as_slice());
            let bound = 1e-8 * (1.0 + numeric::norm_inf(v.as_slice()));
            debug_assert!(residual <= bound, "H⁻¹v residual {residual:e} > {bound:e}");
        }
        u
    }
}

/// Solves `h u = v` for a symmetric positive definite `h`.
pub fn solve_hinv(h: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != h.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: v.len(),
        });
    }
    Ok(HessianFactor::new(h)?.solve(v))
}

/// Damped Newton iteration with backtracking on the weighted objective.
///
/// Stops once `‖∇F‖∞ ≤ tol`, then takes one extra full Newton step if it
/// lowers the gradient norm further.
pub(crate) fn minimize(
    risk: &WeightedRisk<'_>,
    init: &ModelParams,
    tol: f64,
    max_iters: usize,
) -> Result<ModelParams> {
    let mut m = init.clone();
    let mut f = risk.value(&m);
    let mut g = risk.gradient(&m);
    let mut gnorm = numeric::norm_inf(g.as_slice());
    let mut iters = 0;
    while gnorm > tol {
        if iters == max_iters || !f.is_finite() {
            return Err(Error::NoConvergence {
                iters,
                grad_norm: gnorm,
            });
        }
        iters += 1;
        let step = newton_direction(risk, &m, &g);
        let slope = g.dot(&step);
        // a non-descent direction can only come from a badly conditioned solve
        let step = if slope < 0.0 { step } else { -g.clone() };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = m.shifted(&(&step * t));
            let ft = risk.value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * t * slope {
                m = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let g_new = risk.gradient(&m);
        let gnorm_new = numeric::norm_inf(g_new.as_slice());
        if !accepted {
            // Objective is flat to rounding; a full step may still lower the gradient.
            let trial = m.shifted(&step);
            let g_trial = risk.gradient(&trial);
            let gn = numeric::norm_inf(g_trial.as_slice());
            if gn < gnorm {
                m = trial;
                f = risk.value(&m);
                g = g_trial;
                gnorm = gn;
                continue;
            }
            return Err(Error::NoConvergence {
                iters,
                grad_norm: gnorm,
            });
        }
        g = g_new;
        gnorm = gnorm_new;
    }
    // polish
    let step = newton_direction(risk, &m, &g);
    let trial = m.shifted(&step);
    let gn = numeric::norm_inf(risk.gradient(&trial).as_slice());
    if gn < gnorm && trial.is_finite() {
        m = trial;
    }
    Ok(m)
}

/// `-H⁻¹ g`, shifting the diagonal until the Hessian factorizes.
fn newton_direction(risk: &WeightedRisk<'_>, m: &ModelParams, g: &DVector<f64>) -> DVector<f64> {
    let mut shift = 0.0;
    loop {
        let h = risk.hessian(m, shift);
        if let Some(chol) = Cholesky::new(h) {
            return -chol.solve(g);
        }
        shift = if shift == 0.0 { 1e-10 } else { shift * 10.0 };
        if shift > 1e12 {
            return -g.clone();
        }
    }
}

/// Empirical-risk minimizer over `samples`.
pub fn train(samples: &[Sample], cfg: &TrainConfig, init: &ModelParams) -> Result<ModelParams> {
    cfg.validate()?;
    check_samples(samples, init)?;
    let risk = WeightedRisk::new(samples, None, samples.len() as f64, cfg.l2_reg);
    minimize(&risk, init, cfg.grad_tol, cfg.max_iters)
}

/// Minimizer of `(1/n)·Σ wᵢ ℓ(zᵢ; θ)` for explicit per-sample weights.
pub fn train_weighted(
    samples: &[Sample],
    weights: &[f64],
    cfg: &TrainConfig,
    init: &ModelParams,
    tol: f64,
) -> Result<ModelParams> {
    cfg.validate()?;
    check_samples(samples, init)?;
    if weights.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            got: weights.len(),
        });
    }
    let risk = WeightedRisk::new(samples, Some(weights), samples.len() as f64, cfg.l2_reg);
    minimize(&risk, init, tol, cfg.max_iters)
}
