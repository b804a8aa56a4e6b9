mod common;

use common::{max_abs_diff, mean, normal_rows, outcomes, rng, sample_sd};
use covshift_dml::debias::{
    combine, crossfit_estimate, estimate_from_summaries, estimate_with_fitted, nocrossfit_estimate, plug_in_estimate,
    pseudo_inverse_estimate, training_summaries, trim, DebiasOptions, FoldComponents, FoldPlan, TrimSpec,
    VarianceMode,
};
use covshift_dml::featmap::DictionarySpec;
use covshift_dml::learners::{fit_lasso_learner, predict_batch, FnLearner, LassoFactory, LassoLearner};
use covshift_dml::riesz::{compute_moments, pseudo_inverse_representer, MeanOutcome};
use covshift_dml::solvers::{lasso_regression, PenaltyRule, SolverOptions};
use covshift_dml::Dataset;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn linear_problem(seed: u64, t: usize, n: usize, shift: f64) -> (Dataset, Vec<f64>, Dataset) {
    let mut r = rng(seed);
    let x = normal_rows(&mut r, t, 2, 0.0);
    let y = outcomes(&mut r, &x, |u| 0.5 + u[0] - 0.7 * u[1] + 0.3 * u[0] * u[1], 0.5);
    let z = normal_rows(&mut r, n, 2, shift);
    (x, y, z)
}

/// Dense least-squares coefficients of `e` on the design of `x`, via normal equations.
fn ols_coefficients(dict: &DictionarySpec, x: &Dataset, e: &[f64]) -> DVector<f64> {
    let b = dict.expand_matrix(x).unwrap().to_matrix();
    let bt = b.transpose();
    (&bt * &b).lu().solve(&(&bt * DVector::from_column_slice(e))).unwrap()
}

#[test]
fn estimate_decomposes_into_plug_in_and_correction() {
    let (x, y, z) = linear_problem(1, 600, 500, 0.3);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let opts = DebiasOptions::default();
    let gamma = FnLearner::new(2, |u: &[f64]| 0.4 + 0.8 * u[0]);
    let res = estimate_with_fitted(&MeanOutcome, &dict, &x, &y, &z, &gamma, PenaltyRule::Fixed(0.01), &opts).unwrap();
    assert!((res.theta_hat - (res.plug_in + res.correction)).abs() < 1e-14);
    let plug = mean(&predict_batch(&gamma, &z).unwrap());
    assert!((res.plug_in - plug).abs() < 1e-14);
    assert!(res.ci_low <= res.theta_hat && res.theta_hat <= res.ci_high);
}

#[test]
fn correction_equals_mean_of_representer_times_residual() {
    let (x, y, z) = linear_problem(2, 800, 400, 0.4);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let opts = DebiasOptions::default();
    let gamma = FnLearner::new(2, |u: &[f64]| u[0] - u[1]);
    let r = 0.02;
    let res = estimate_with_fitted(&MeanOutcome, &dict, &x, &y, &z, &gamma, PenaltyRule::Fixed(r), &opts).unwrap();
    let moments = compute_moments(&MeanOutcome, &dict, &z, &x).unwrap();
    let fit = covshift_dml::riesz::fit_riesz(&moments, r).unwrap();
    let via_alpha: f64 = x
        .rows()
        .zip(&y)
        .map(|(u, yt)| fit.alpha(&dict, u).unwrap() * (yt - gamma_value(u)))
        .sum::<f64>()
        / x.nrows() as f64;
    assert!((res.correction - via_alpha).abs() < 1e-12, "{} vs {via_alpha}", res.correction);

    fn gamma_value(u: &[f64]) -> f64 {
        u[0] - u[1]
    }
}

#[test]
fn ols_fit_leaves_nothing_to_correct() {
    let (x, y, z) = linear_problem(3, 500, 300, 0.5);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let design = dict.expand_matrix(&x).unwrap();
    let fit = lasso_regression(&design, &y, 0.0, &SolverOptions::default()).unwrap();
    let gamma = LassoLearner { dict: dict.clone(), fit };
    let res = estimate_with_fitted(&MeanOutcome, &dict, &x, &y, &z, &gamma, PenaltyRule::Fixed(0.0), &DebiasOptions::default())
        .unwrap();
    assert!(res.correction.abs() < 1e-8, "correction {}", res.correction);
}

#[test]
fn summaries_reproduce_raw_estimate() {
    for seed in 0..5 {
        let (x, y, z) = linear_problem(10 + seed, 400, 300, 0.2);
        let dict = DictionarySpec::quadratic(2).unwrap();
        let opts = DebiasOptions::default();
        let r = PenaltyRule::Fixed(0.01);
        let gamma = fit_lasso_learner(&dict, &x, &y, 0.02).unwrap();
        let raw = estimate_with_fitted(&MeanOutcome, &dict, &x, &y, &z, &gamma, r, &opts).unwrap();
        let s = training_summaries(&dict, &x, &y, &predict_batch(&gamma, &x).unwrap()).unwrap();
        let shared = estimate_from_summaries(&MeanOutcome, &dict, &z, &gamma, &s, r, &opts).unwrap();
        assert!((raw.theta_hat - shared.theta_hat).abs() <= 1e-12);
        assert!((raw.correction - shared.correction).abs() <= 1e-12);
        // No representer value reaches the trimming threshold here, so the variances agree too.
        assert!((raw.v_hat - shared.v_hat).abs() <= 1e-10 * raw.v_hat);
    }
}

#[test]
fn summary_moments_match_direct_sums() {
    let (x, y, _) = linear_problem(4, 200, 10, 0.0);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let fitted: Vec<f64> = x.rows().map(|u| 0.3 * u[0]).collect();
    let s = training_summaries(&dict, &x, &y, &fitted).unwrap();
    let b = dict.expand_matrix(&x).unwrap().to_matrix();
    let t = x.nrows() as f64;
    let e = DVector::from_iterator(y.len(), y.iter().zip(&fitted).map(|(a, f)| a - f));
    let q = b.transpose() * &b / t;
    let cp = b.transpose() * &e / t;
    let w = DMatrix::from_diagonal(&e.map(|v| v * v));
    let omega = b.transpose() * w * &b / t;
    assert!((q - &s.q_hat).amax() < 1e-12);
    assert!(max_abs_diff(cp.as_slice(), &s.residual_crossprod) < 1e-12);
    assert!((omega - &s.residual_weighted_moment).amax() < 1e-10);
    assert_eq!(s.n_train, 200);
}

#[test]
fn pseudo_inverse_representer_solves_normal_equations() {
    let (x, _, z) = linear_problem(5, 1000, 1000, 0.3);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let moments = compute_moments(&MeanOutcome, &dict, &z, &x).unwrap();
    let fit = pseudo_inverse_representer(&moments).unwrap();
    let dense = moments.q_hat.clone().lu().solve(&DVector::from_column_slice(&moments.m_hat)).unwrap();
    assert!(max_abs_diff(&fit.rho, dense.as_slice()) < 1e-9);
}

#[test]
fn pseudo_inverse_handles_duplicated_columns() {
    // Two identical covariates make the quadratic design rank deficient.
    let mut r = rng(6);
    let base = normal_rows(&mut r, 300, 1, 0.0);
    let x = Dataset::new(300, 2, base.as_slice().iter().flat_map(|&v| [v, v]).collect()).unwrap();
    let y = outcomes(&mut r, &x, |u| 1.0 + u[0], 0.3);
    let zb = normal_rows(&mut r, 200, 1, 0.5);
    let z = Dataset::new(200, 2, zb.as_slice().iter().flat_map(|&v| [v, v]).collect()).unwrap();
    let dict = DictionarySpec::quadratic(2).unwrap();
    let gamma = FnLearner::new(2, |u: &[f64]| u[0]);
    let res = pseudo_inverse_estimate(&MeanOutcome, &dict, &x, &y, &z, &gamma, &DebiasOptions::default()).unwrap();
    assert!(res.theta_hat.is_finite() && res.v_hat.is_finite());
    // The rank-deficient fit still reproduces the in-span target 1 + E[Z].
    assert!((res.theta_hat - (1.0 + mean(zb.as_slice()))).abs() < 0.1);
}

#[test]
fn true_regression_gives_mean_zero_correction() {
    let dict = DictionarySpec::quadratic(2).unwrap();
    let opts = DebiasOptions::default();
    let g0 = |u: &[f64]| 0.5 + u[0] - 0.7 * u[1] + 0.3 * u[0] * u[1];
    let gamma = FnLearner::new(2, g0);
    let corrections: Vec<f64> = (0..40)
        .map(|s| {
            let (x, y, z) = linear_problem(100 + s, 1000, 1000, 0.3);
            estimate_with_fitted(&MeanOutcome, &dict, &x, &y, &z, &gamma, PenaltyRule::Rate { c: 0.1 }, &opts)
                .unwrap()
                .correction
        })
        .collect();
    let se = sample_sd(&corrections) / (corrections.len() as f64).sqrt();
    assert!(mean(&corrections).abs() < 4.0 * se, "mean {} se {se}", mean(&corrections));
}

#[test]
fn crossfit_lasso_recovers_shifted_mean() {
    let (x, y, z) = linear_problem(7, 2000, 2000, 0.5);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let plan = FoldPlan::new(x.nrows(), 5, 3).unwrap();
    let factory = LassoFactory {
        dict: dict.clone(),
        penalty: PenaltyRule::Rate { c: 4.0 },
        opts: SolverOptions::default(),
    };
    let res = crossfit_estimate(&MeanOutcome, &dict, &x, &y, &z, &plan, &factory, PenaltyRule::Rate { c: 0.1 }, &DebiasOptions::default())
        .unwrap();
    // E[g(Z)] with Z ~ N(0.5, I): 0.5 + 0.5 − 0.35 + 0.3·0.25.
    let truth = 0.725;
    assert!((res.theta_hat - truth).abs() < 4.0 * res.std_error, "{} ± {}", res.theta_hat, res.std_error);
    assert_eq!(res.per_fold.len(), 5);
    assert_eq!(res.n_train, 2000);
    let weighted: f64 = res.per_fold.iter().map(|f| f.fold_size as f64 / 2000.0 * f.theta).sum();
    assert!((weighted - res.theta_hat).abs() < 1e-12);
}

#[test]
fn crossfit_depends_only_on_fold_membership() {
    // Reversing the training rows and relabelling the plan to match gives the same estimate.
    let (x, y, z) = linear_problem(8, 600, 400, 0.2);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let plan = FoldPlan::new(600, 3, 1).unwrap();
    let order: Vec<usize> = (0..600).rev().collect();
    let x_rev = x.select(&order);
    let y_rev: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let plan_rev = FoldPlan::from_assignments(order.iter().map(|&i| plan.assignments()[i]).collect(), 3).unwrap();
    let factory = LassoFactory {
        dict: dict.clone(),
        penalty: PenaltyRule::Fixed(0.05),
        opts: SolverOptions::default(),
    };
    let opts = DebiasOptions::default();
    let r = PenaltyRule::Fixed(0.01);
    let a = crossfit_estimate(&MeanOutcome, &dict, &x, &y, &z, &plan, &factory, r, &opts).unwrap();
    let b = crossfit_estimate(&MeanOutcome, &dict, &x_rev, &y_rev, &z, &plan_rev, &factory, r, &opts).unwrap();
    assert!((a.theta_hat - b.theta_hat).abs() < 1e-9);
    assert!((a.v_hat - b.v_hat).abs() < 1e-9 * a.v_hat);
}

#[test]
fn nocrossfit_is_invariant_to_row_order() {
    let (x, y, z) = linear_problem(9, 500, 300, 0.2);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let order: Vec<usize> = (0..500).map(|i| (i * 7) % 500).collect();
    let x2 = x.select(&order);
    let y2: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let z2 = z.select(&(0..300).rev().collect::<Vec<_>>());
    let opts = DebiasOptions::default();
    let r = PenaltyRule::Fixed(0.02);
    let a = nocrossfit_estimate(&MeanOutcome, &dict, &x, &y, &z, r, r, &opts).unwrap();
    let b = nocrossfit_estimate(&MeanOutcome, &dict, &x2, &y2, &z2, r, r, &opts).unwrap();
    assert!((a.theta_hat - b.theta_hat).abs() < 1e-9);
}

#[test]
fn plug_in_has_no_correction() {
    let (_, _, z) = linear_problem(11, 10, 100, 0.0);
    let gamma = FnLearner::new(2, |u: &[f64]| u[0] + 2.0);
    let res = plug_in_estimate(&MeanOutcome, &z, &gamma, 0.9).unwrap();
    assert_eq!(res.correction, 0.0);
    let first: Vec<f64> = z.rows().map(|r| r[0]).collect();
    assert!((res.theta_hat - (2.0 + mean(&first))).abs() < 1e-12);
}

#[test]
fn printed_and_corrected_variances_differ_by_xi() {
    let m = [1.0, 2.0, 4.0, 7.0];
    let comp = FoldComponents::from_values(&m, &[1.0, -1.0], &[0.5, 0.5], 100.0).unwrap();
    let res = combine(vec![comp.clone()], 4, VarianceMode::Corrected, 0.95).unwrap();
    assert!((res.v_hat_printed - (comp.s2_m + comp.s2_alpha)).abs() < 1e-14);
    assert!((res.v_hat_corrected - (comp.s2_m + 2.0 * comp.s2_alpha)).abs() < 1e-14);
    assert_eq!(res.v_hat, res.v_hat_corrected);
    assert!((res.std_error - (res.v_hat / 4.0).sqrt()).abs() < 1e-15);
}

#[test]
fn debias_result_json_is_flat_and_parseable() {
    let (x, y, z) = linear_problem(12, 300, 200, 0.1);
    let dict = DictionarySpec::quadratic(2).unwrap();
    let res = nocrossfit_estimate(&MeanOutcome, &dict, &x, &y, &z, PenaltyRule::Fixed(0.05), PenaltyRule::Fixed(0.05), &DebiasOptions::default())
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(&res.to_json()).unwrap();
    for key in ["theta_hat", "plug_in", "correction", "v_hat", "std_error", "ci_low", "ci_high", "n_field", "n_train", "per_fold"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["theta_hat"].as_f64().unwrap(), res.theta_hat);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_sizes_differ_by_at_most_one(t in 2usize..400, l in 2usize..12, seed in any::<u64>()) {
        prop_assume!(l <= t);
        let plan = FoldPlan::new(t, l, seed).unwrap();
        let sizes = plan.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), t);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..l {
            let fold = plan.fold(f);
            let comp = plan.complement(f);
            prop_assert_eq!(fold.len() + comp.len(), t);
            prop_assert!(fold.iter().all(|i| !comp.contains(i)));
        }
    }

    #[test]
    fn trimming_is_a_clamp(a in -1e6f64..1e6, tau in 1e-3f64..1e3) {
        let v = trim(a, tau);
        prop_assert!(v.abs() <= tau);
        if a.abs() <= tau { prop_assert_eq!(v, a); }
    }

    #[test]
    fn fold_weights_reproduce_combined_estimate(
        parts in prop::collection::vec((-5.0f64..5.0, -1.0f64..1.0, 0.0f64..3.0, 0.0f64..3.0, 1usize..50), 1..8),
        n_field in 1usize..1000,
    ) {
        let folds: Vec<FoldComponents> = parts
            .iter()
            .map(|&(p, c, s2m, s2a, size)| FoldComponents { theta: p + c, plug_in: p, correction: c, s2_m: s2m, s2_alpha: s2a, fold_size: size })
            .collect();
        let total: usize = parts.iter().map(|p| p.4).sum();
        let res = combine(folds.clone(), n_field, VarianceMode::Corrected, 0.95).unwrap();
        let theta: f64 = folds.iter().map(|f| f.fold_size as f64 / total as f64 * f.theta).sum();
        prop_assert!((res.theta_hat - theta).abs() < 1e-12);
        prop_assert!(res.v_hat >= 0.0);
        prop_assert!(res.ci_low <= res.ci_high);
        let xi = n_field as f64 / total as f64;
        prop_assert!((res.xi_hat - xi).abs() < 1e-15);
    }

    #[test]
    fn growth_trim_threshold(n in 1usize..1_000_000, c in 0.1f64..20.0) {
        let t = TrimSpec::Growth { c }.tau_bar(n).unwrap();
        prop_assert!((t - c * (n as f64).powf(0.25)).abs() < 1e-9 * t);
    }

    #[test]
    fn ols_residual_correction_vanishes_for_any_gamma(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        // With γ̂ already the least-squares fit, the residuals are orthogonal to the dictionary.
        let (x, y, z) = linear_problem(seed, 120, 60, 0.3);
        let dict = DictionarySpec::quadratic(2).unwrap();
        let fitted_off: Vec<f64> = x.rows().map(|u| a * u[0] + b).collect();
        let resid: Vec<f64> = y.iter().zip(&fitted_off).map(|(y, f)| y - f).collect();
        let beta = ols_coefficients(&dict, &x, &resid);
        let coef = beta.as_slice().to_vec();
        let dict2 = dict.clone();
        let gamma = FnLearner::new(2, move |u: &[f64]| a * u[0] + b + dict2.expand(u).unwrap().iter().zip(&coef).map(|(p, q)| p * q).sum::<f64>());
        let res = estimate_with_fitted(&MeanOutcome, &dict, &x, &y, &z, &gamma, PenaltyRule::Fixed(0.0), &DebiasOptions::default()).unwrap();
        prop_assert!(res.correction.abs() < 1e-8);
    }
}
