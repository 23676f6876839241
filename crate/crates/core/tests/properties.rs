//! Randomized properties checked with proptest.

use nalgebra::DVector;
use proptest::prelude::*;

use soft_unlearn::data::{dataset_csv, gen_synthetic, load_csv, split, CsvSchema, SplitTag, SyntheticKind};
use soft_unlearn::influence::weighted_influence;
use soft_unlearn::metrics::{self, craft_adversarial, EvalRole, EvalSet, MetricKind};
use soft_unlearn::model::{self, ModelParams, Sample, TrainConfig};
use soft_unlearn::numeric::{dot, norm_inf};
use soft_unlearn::qp::{kkt_residuals, solve_analytic, solve_numeric, KktCase, QpInstance};
use soft_unlearn::stats::{pearson, spearman};
use soft_unlearn::unlearn::{forget_set, hard_weights_from, HardMode};

fn sample_strategy(d: usize) -> impl Strategy<Value = Sample> {
    (prop::collection::vec(-3.0..3.0f64, d), 0u8..2, 0u8..2).prop_map(|(x, y, g)| Sample { x, y, g })
}

fn model_strategy(d: usize) -> impl Strategy<Value = ModelParams> {
    (prop::collection::vec(-2.0..2.0f64, d), -1.0..1.0f64).prop_map(|(theta, intercept)| ModelParams { theta, intercept })
}

/// A set with both groups and a positive in each group.
fn eval_strategy(d: usize) -> impl Strategy<Value = Vec<Sample>> {
    prop::collection::vec(sample_strategy(d), 4..30).prop_map(move |mut v| {
        for (i, (y, g)) in [(1, 0), (1, 1), (0, 0), (0, 1)].into_iter().enumerate() {
            v[i].y = y;
            v[i].g = g;
        }
        v
    })
}

fn qp_strategy() -> impl Strategy<Value = QpInstance> {
    (2usize..40)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0..2.0f64, n),
                prop::collection::vec(-2.0..2.0f64, n),
                -3.0..1.0f64,
                -4.0..2.0f64,
            )
        })
        .prop_map(|(m, u, log_lambda, log_delta)| {
            QpInstance::new(m, u, 10f64.powf(log_lambda), 10f64.powf(log_delta)).unwrap()
        })
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Ranks by counting, ties averaged.
fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(z in sample_strategy(3), m in model_strategy(3), l2 in 0.0..0.1f64) {
        let g = model::gradient(&z, &m, l2).unwrap();
        let base = m.to_augmented();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut e = DVector::zeros(base.len());
            e[k] = h;
            let up = model::loss(&z, &ModelParams::from_augmented(&(&base + &e)), l2).unwrap();
            let dn = model::loss(&z, &ModelParams::from_augmented(&(&base - &e)), l2).unwrap();
            let fd = (up - dn) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1.0), "k={k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn hessian_is_damped_psd(zs in prop::collection::vec(sample_strategy(3), 1..20), m in model_strategy(3), damping in 1e-4..1e-1f64) {
        let cfg = TrainConfig { damping, ..TrainConfig::default() };
        let h = model::hessian(&zs, &m, &cfg).unwrap();
        let min = h.symmetric_eigenvalues().min();
        prop_assert!(min >= damping - 1e-10, "min eigenvalue {min} < damping {damping}");
    }

    #[test]
    fn crafted_samples_hit_the_margin(zs in eval_strategy(3), m in model_strategy(3), gamma in 1.01..4.0f64) {
        prop_assume!(norm_inf(&m.theta) > 1e-3);
        let t = EvalSet::new(zs.clone(), EvalRole::Validation).unwrap();
        let adv = craft_adversarial(&t, &m, gamma).unwrap();
        prop_assert_eq!(t.samples(), &zs[..]);
        let tn = dot(&m.theta, &m.theta).sqrt();
        for (z, a) in zs.iter().zip(adv.samples()) {
            prop_assert!((m.logit(&a.x) - (1.0 - gamma) * m.logit(&z.x)).abs() <= 1e-9);
            let diff: Vec<f64> = a.x.iter().zip(&z.x).map(|(p, q)| p - q).collect();
            let dn = dot(&diff, &diff).sqrt();
            if dn > 1e-12 {
                let cos = dot(&diff, &m.theta) / (dn * tn);
                prop_assert!(1.0 - cos.abs() <= 1e-9);
            }
            prop_assert_eq!((a.y, a.g), (z.y, z.g));
        }
    }

    #[test]
    fn fairness_metrics_are_bounded(zs in eval_strategy(3), m in model_strategy(3)) {
        let t = EvalSet::new(zs, EvalRole::Test).unwrap();
        let dp = metrics::demographic_parity(&t, &m).unwrap();
        let eop = metrics::equal_opportunity(&t, &m).unwrap();
        prop_assert!((0.0..=1.0).contains(&dp));
        prop_assert!(eop >= 0.0 && eop.is_finite());
    }

    #[test]
    fn metric_gradient_matches_central_differences(zs in eval_strategy(2), m in model_strategy(2)) {
        for kind in [MetricKind::Utility, MetricKind::Dp, MetricKind::Eop] {
            let f0 = metrics::metric_value(kind, &zs, &m).unwrap();
            // the absolute value in DP and EOP is not differentiable at zero
            prop_assume!(kind == MetricKind::Utility || f0 > 1e-4);
            let g = metrics::metric_gradient(kind, &zs, &m).unwrap();
            let base = m.to_augmented();
            let h = 1e-6;
            for k in 0..base.len() {
                let mut e = DVector::zeros(base.len());
                e[k] = h;
                let up = metrics::metric_value(kind, &zs, &ModelParams::from_augmented(&(&base + &e))).unwrap();
                let dn = metrics::metric_value(kind, &zs, &ModelParams::from_augmented(&(&base - &e))).unwrap();
                let fd = (up - dn) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-5 * fd.abs().max(1.0), "{kind} k={k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn weighted_influence_is_linear(eps in -5.0..5.0f64, a in -4.0..4.0f64, i in -10.0..10.0f64) {
        let lhs = weighted_influence(a * eps, i);
        let rhs = a * weighted_influence(eps, i);
        prop_assert!((lhs - rhs).abs() <= 1e-14 * lhs.abs().max(1.0));
    }

    #[test]
    fn qp_solution_is_feasible_and_certified(q in qp_strategy()) {
        let w = solve_analytic(&q).unwrap();
        let r = kkt_residuals(&q, &w);
        let scale = 1.0 + q.delta + norm_inf(&q.i_metric) * (1.0 + w.dual_beta2) + norm_inf(&q.i_util) * w.dual_beta1;
        prop_assert!(dot(&w.eps, &q.i_metric) <= q.delta + 1e-9 * (1.0 + q.delta));
        prop_assert!(dot(&w.eps, &q.i_util) >= -1e-9 * scale);
        prop_assert!(r.stationarity <= 1e-8 * scale, "stationarity {}", r.stationarity);
        prop_assert!(r.slack_util <= 1e-9 * scale * scale && r.slack_metric <= 1e-9 * scale * scale);
        prop_assert!(w.dual_beta1 >= 0.0 && w.dual_beta2 >= 0.0);
    }

    #[test]
    fn analytic_and_numeric_agree(q in qp_strategy()) {
        let a = solve_analytic(&q).unwrap();
        let n = solve_numeric(&q).unwrap();
        let diff = a.eps.iter().zip(&n.eps).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        let scale = 1.0 + norm_inf(&a.eps);
        prop_assert!(diff <= 1e-6 * scale, "diff {diff}");
        prop_assert!((q.objective(&a.eps) - q.objective(&n.eps)).abs() <= 1e-9 * (1.0 + q.objective(&a.eps).abs()));
    }

    #[test]
    fn lambda_scaling_by_case(q in qp_strategy()) {
        let w = solve_analytic(&q).unwrap();
        let doubled = QpInstance::new(q.i_metric.clone(), q.i_util.clone(), 2.0 * q.lambda, q.delta).unwrap();
        let w2 = solve_analytic(&doubled).unwrap();
        prop_assume!(w.case == w2.case && w.diagnostic.is_none() && w2.diagnostic.is_none());
        match w.case.unwrap() {
            KktCase::Unconstrained | KktCase::UtilityBound => {
                for (a, b) in w.eps.iter().zip(&w2.eps) {
                    prop_assert_eq!(*b, a / 2.0);
                }
            }
            KktCase::MetricBound | KktCase::BothBound => prop_assert_eq!(&w.eps, &w2.eps),
        }
    }

    #[test]
    fn case_one_and_two_meet_at_the_boundary(m in prop::collection::vec(-2.0..2.0f64, 2..30), lambda in 0.01..10.0f64) {
        let mm = dot(&m, &m);
        prop_assume!(mm > 1e-6);
        let q = QpInstance::new(m.clone(), m.clone(), lambda, mm / (2.0 * lambda)).unwrap();
        let w = solve_analytic(&q).unwrap();
        prop_assert!(matches!(w.case, Some(KktCase::Unconstrained) | Some(KktCase::MetricBound)));
        let bound: Vec<f64> = m.iter().map(|v| q.delta / mm * v).collect();
        let free: Vec<f64> = m.iter().map(|v| v / (2.0 * lambda)).collect();
        for ((a, b), c) in w.eps.iter().zip(&bound).zip(&free) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            prop_assert!((a - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn hard_weights_remove_the_floor_fraction(i in prop::collection::vec(-5.0..5.0f64, 1..60), fraction in 0.0..=1.0f64) {
        let k = (fraction * i.len() as f64).floor() as usize;
        let f = forget_set(&i, fraction).unwrap();
        prop_assert_eq!(f.len(), k);
        let w = hard_weights_from(&i, HardMode::IfRemoval, fraction).unwrap();
        prop_assert_eq!(w.eps.iter().filter(|&&e| e == -1.0).count(), k);
        let worst_kept = (0..i.len()).filter(|j| !f.contains(j)).map(|j| i[j]).fold(f64::INFINITY, f64::min);
        prop_assert!(f.iter().all(|&j| i[j] <= worst_kept));
    }

    #[test]
    fn correlations_match_definitions(pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..50)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let p = pearson(&x, &y).unwrap();
        prop_assert!((p - naive_pearson(&x, &y)).abs() <= 1e-12);
        let s = spearman(&x, &y).unwrap();
        prop_assert!((s - naive_pearson(&naive_ranks(&x), &naive_ranks(&y))).abs() <= 1e-12);
    }

    #[test]
    fn spearman_handles_ties(x in prop::collection::vec(0u8..4, 4..30), y in prop::collection::vec(0u8..4, 4..30)) {
        let n = x.len().min(y.len());
        let x: Vec<f64> = x[..n].iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = y[..n].iter().map(|&v| f64::from(v)).collect();
        let (rx, ry) = (naive_ranks(&x), naive_ranks(&y));
        let const_input = rx.iter().all(|&r| r == rx[0]) || ry.iter().all(|&r| r == ry[0]);
        match spearman(&x, &y) {
            Ok(s) => prop_assert!((s - naive_pearson(&rx, &ry)).abs() <= 1e-12),
            Err(_) => prop_assert!(const_input),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 12usize..400, seed in any::<u64>(), a in 1.0..6.0f64, b in 0.5..2.0f64, c in 0.5..2.0f64) {
        let t = a + b + c;
        let ds = gen_synthetic(SyntheticKind::BiasedGauss, n, 2, 1.0, 1).unwrap();
        let Ok(s) = split(&ds, [a / t, b / t, c / t], seed) else {
            return Ok(());
        };
        let sizes = s.split_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().all(|&k| k > 0));
        let mut all: Vec<usize> = SplitTag::ALL.iter().flat_map(|&tag| s.indices(tag)).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(sizes[1], (n as f64 * b / t).round() as usize);
        prop_assert_eq!(sizes[2], (n as f64 * c / t).round() as usize);
        prop_assert_eq!(s.features, ds.features);
    }

    #[test]
    fn generators_are_deterministic(n in 12usize..200, d in 1usize..5, seed in any::<u64>(), kind in prop::sample::select(vec![SyntheticKind::BiasedGauss, SyntheticKind::Boundary2d, SyntheticKind::Symmetric])) {
        let n = if kind == SyntheticKind::Symmetric { n + n % 2 } else { n };
        let a = gen_synthetic(kind, n, d, 1.0, seed).unwrap();
        let b = gen_synthetic(kind, n, d, 1.0, seed).unwrap();
        prop_assert_eq!(&a, &b);
        a.validate().unwrap();
    }

    #[test]
    fn csv_round_trip_is_exact(n in 12usize..80, d in 1usize..4, seed in any::<u64>(), scale in -30i32..30) {
        let mut ds = gen_synthetic(SyntheticKind::BiasedGauss, n, d, 1.0, seed).unwrap();
        let f = 2f64.powi(scale) / 3.0;
        for row in &mut ds.features {
            row.iter_mut().for_each(|v| *v *= f);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, dataset_csv(&ds).unwrap()).unwrap();
        let back = load_csv(&path, &CsvSchema::default()).unwrap();
        prop_assert_eq!(back.features, ds.features);
        prop_assert_eq!(back.labels, ds.labels);
        prop_assert_eq!(back.sensitive, ds.sensitive);
        prop_assert_eq!(back.split, ds.split);
    }
}
