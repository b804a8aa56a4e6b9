//! Debiased estimators of `θ₀ = E[m(Z, γ₀)]`.
//!
//! Every estimator here has the same shape: a plug-in average of `m(Z_i, γ̂)`
//! over the field sample plus a correction averaging `α̂(X_t)(Y_t − γ̂(X_t))`
//! over training rows that were not used to fit `γ̂` (cross-fit) or over all
//! training rows (Lasso without cross-fitting).
//!
//! Variance: with `ŝ²_m` the field variance of `m(Z_i, γ̂)` and `ŝ²_α` the
//! mean of `α̃(X_t)² e_t²` (`α̃` trimmed), the printed estimator is
//! `V̂ = ŝ²_m + ŝ²_α`. The default corrected estimator is
//! `ŝ²_m + (N/T) ŝ²_α`, which matches the limit variance when `N ≠ T`.
//! Standard errors are `sqrt(V̂/N)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dot, format_float, mean, Dataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::featmap::DictionarySpec;
use crate::learners::{predict_batch, LearnerFactory, RegressionLearner};
use crate::riesz::{
    field_moments, fit_riesz_with, pseudo_inverse_debias_coefficients, pseudo_inverse_representer,
    second_moment, LinearFunctional, RieszFit, RieszProblemMoments,
};
use crate::solvers::{lasso_regression, PenaltyRule, SolverOptions};
use crate::stats::two_sided_z;

// ---------------------------------------------------------------------------
// Folds and trimming
// ---------------------------------------------------------------------------

/// Partition of training rows into `L` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    num_folds: usize,
    assignments: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    /// Random partition with fold sizes differing by at most one.
    pub fn new(num_rows: usize, num_folds: usize, seed: u64) -> Result<Self> {
        if num_folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {num_folds}")));
        }
        if num_folds > num_rows {
            return Err(Error::FoldTooSmall {
                fold: num_rows,
                size: 0,
                required: 1,
            });
        }
        let mut order: Vec<usize> = (0..num_rows).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignments = vec![0; num_rows];
        for (pos, &row) in order.iter().enumerate() {
            assignments[row] = pos % num_folds;
        }
        Ok(Self {
            num_folds,
            assignments,
            seed,
        })
    }

    /// Plan from explicit fold labels `0..num_folds`; every fold must be nonempty.
    pub fn from_assignments(assignments: Vec<usize>, num_folds: usize) -> Result<Self> {
        if num_folds < 1 {
            return Err(Error::Config("need at least one fold".into()));
        }
        let mut counts = vec![0usize; num_folds];
        for &a in &assignments {
            if a >= num_folds {
                return Err(Error::Config(format!("fold label {a} out of range 0..{num_folds}")));
            }
            counts[a] += 1;
        }
        if let Some(fold) = counts.iter().position(|&c| c == 0) {
            return Err(Error::FoldTooSmall {
                fold,
                size: 0,
                required: 1,
            });
        }
        Ok(Self {
            num_folds,
            assignments,
            seed: 0,
        })
    }

    pub fn num_folds(&self) -> usize {
        self.num_folds
    }

    pub fn num_rows(&self) -> usize {
        self.assignments.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Rows of fold `l` in increasing order.
    pub fn fold(&self, l: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == l).collect()
    }

    /// Rows outside fold `l` in increasing order.
    pub fn complement(&self, l: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != l).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_folds];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Trimming threshold `τ̄_N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimSpec {
    Fixed(f64),
    /// `τ̄_N = c · N^{1/4}`.
    Growth { c: f64 },
}

impl Default for TrimSpec {
    fn default() -> Self {
        TrimSpec::Growth { c: 5.0 }
    }
}

impl TrimSpec {
    pub fn tau_bar(&self, n_field: usize) -> Result<f64> {
        let t = match *self {
            TrimSpec::Fixed(t) => t,
            TrimSpec::Growth { c } => c * (n_field as f64).powf(0.25),
        };
        if !(t > 0.0) {
            return Err(Error::Config(format!("trimming threshold must be positive, got {t}")));
        }
        Ok(t)
    }
}

/// `τ_N(a)`: `a` clamped to `[−τ̄, τ̄]`.
pub fn trim(a: f64, tau_bar: f64) -> f64 {
    a.clamp(-tau_bar, tau_bar)
}

// ---------------------------------------------------------------------------
// Options and results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// `ŝ²_m + (N/T) ŝ²_α`.
    #[default]
    Corrected,
    /// `ŝ²_m + ŝ²_α`.
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasOptions {
    pub level: f64,
    pub variance: VarianceMode,
    pub trim: TrimSpec,
    pub solver: SolverOptions,
}

impl Default for DebiasOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            variance: VarianceMode::Corrected,
            trim: TrimSpec::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// Per-fold pieces of the estimate and its variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldComponents {
    pub theta: f64,
    pub plug_in: f64,
    pub correction: f64,
    pub s2_m: f64,
    pub s2_alpha: f64,
    pub fold_size: usize,
}

impl FoldComponents {
    /// Components from the field values `m(Z_i, γ̂)` and the representer and
    /// residuals on the rows averaged in the correction.
    pub fn from_values(m_values: &[f64], alpha: &[f64], residuals: &[f64], tau_bar: f64) -> Result<Self> {
        if m_values.is_empty() {
            return Err(Error::EmptySample("field values"));
        }
        if residuals.is_empty() {
            return Err(Error::EmptySample("correction rows"));
        }
        if alpha.len() != residuals.len() {
            return Err(Error::shape("representer values", residuals.len(), alpha.len()));
        }
        let n_rows = residuals.len() as f64;
        let plug_in = mean(m_values);
        let correction = alpha.iter().zip(residuals).map(|(a, e)| a * e).sum::<f64>() / n_rows;
        let s2_alpha = alpha
            .iter()
            .zip(residuals)
            .map(|(&a, &e)| {
                let t = trim(a, tau_bar);
                t * t * e * e
            })
            .sum::<f64>()
            / n_rows;
        Self::assemble(m_values, plug_in, correction, s2_alpha, residuals.len())
    }

    fn assemble(m_values: &[f64], plug_in: f64, correction: f64, s2_alpha: f64, fold_size: usize) -> Result<Self> {
        let s2_m = m_values.iter().map(|m| (m - plug_in).powi(2)).sum::<f64>() / m_values.len() as f64;
        let out = Self {
            theta: plug_in + correction,
            plug_in,
            correction,
            s2_m,
            s2_alpha,
            fold_size,
        };
        if !(out.theta.is_finite() && out.s2_m.is_finite() && out.s2_alpha.is_finite()) {
            return Err(Error::NonFinite("estimate components"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub v_hat: f64,
    pub v_hat_printed: f64,
    pub v_hat_corrected: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fold-weighted variance, standard error and confidence interval around `theta`.
pub fn variance_and_ci(
    folds: &[FoldComponents],
    theta: f64,
    n_field: usize,
    mode: VarianceMode,
    level: f64,
) -> Result<VarianceSummary> {
    let z = two_sided_z(level)?;
    let n_train: usize = folds.iter().map(|f| f.fold_size).sum();
    if n_train == 0 || n_field == 0 {
        return Err(Error::EmptySample("variance components"));
    }
    let xi = n_field as f64 / n_train as f64;
    let (mut printed, mut corrected) = (0.0, 0.0);
    for f in folds {
        let w = f.fold_size as f64 / n_train as f64;
        printed += w * (f.s2_m + f.s2_alpha);
        corrected += w * (f.s2_m + xi * f.s2_alpha);
    }
    let v_hat = match mode {
        VarianceMode::Corrected => corrected,
        VarianceMode::Printed => printed,
    };
    let std_error = (v_hat / n_field as f64).sqrt();
    Ok(VarianceSummary {
        v_hat,
        v_hat_printed: printed,
        v_hat_corrected: corrected,
        std_error,
        ci_low: theta - z * std_error,
        ci_high: theta + z * std_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasResult {
    pub theta_hat: f64,
    pub plug_in: f64,
    pub correction: f64,
    pub v_hat: f64,
    pub v_hat_printed: f64,
    pub v_hat_corrected: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub xi_hat: f64,
    pub n_field: usize,
    pub n_train: usize,
    pub per_fold: Vec<FoldComponents>,
}

/// Combines fold components with weights `T_ℓ/T`.
pub fn combine(folds: Vec<FoldComponents>, n_field: usize, mode: VarianceMode, level: f64) -> Result<DebiasResult> {
    if folds.is_empty() {
        return Err(Error::EmptySample("fold components"));
    }
    let n_train: usize = folds.iter().map(|f| f.fold_size).sum();
    let (mut plug_in, mut correction) = (0.0, 0.0);
    for f in &folds {
        let w = f.fold_size as f64 / n_train as f64;
        plug_in += w * f.plug_in;
        correction += w * f.correction;
    }
    let theta_hat = plug_in + correction;
    let var = variance_and_ci(&folds, theta_hat, n_field, mode, level)?;
    Ok(DebiasResult {
        theta_hat,
        plug_in,
        correction,
        v_hat: var.v_hat,
        v_hat_printed: var.v_hat_printed,
        v_hat_corrected: var.v_hat_corrected,
        std_error: var.std_error,
        ci_low: var.ci_low,
        ci_high: var.ci_high,
        level,
        xi_hat: n_field as f64 / n_train as f64,
        n_field,
        n_train,
        per_fold: folds,
    })
}

fn json_number(x: f64) -> String {
    if x.is_finite() {
        format_float(x)
    } else {
        "null".into()
    }
}

impl DebiasResult {
    /// Flat JSON object; numbers carry 17 significant digits.
    pub fn to_json(&self) -> String {
        let scalars = [
            ("theta_hat", self.theta_hat),
            ("plug_in", self.plug_in),
            ("correction", self.correction),
            ("v_hat", self.v_hat),
            ("v_hat_printed", self.v_hat_printed),
            ("v_hat_corrected", self.v_hat_corrected),
            ("std_error", self.std_error),
            ("ci_low", self.ci_low),
            ("ci_high", self.ci_high),
            ("level", self.level),
            ("xi_hat", self.xi_hat),
        ];
        let mut parts: Vec<String> = scalars
            .iter()
            .map(|(k, v)| format!("\"{k}\":{}", json_number(*v)))
            .collect();
        parts.push(format!("\"n_field\":{}", self.n_field));
        parts.push(format!("\"n_train\":{}", self.n_train));
        let folds: Vec<String> = self
            .per_fold
            .iter()
            .map(|f| {
                format!(
                    "{{\"theta\":{},\"plug_in\":{},\"correction\":{},\"s2_m\":{},\"s2_alpha\":{},\"fold_size\":{}}}",
                    json_number(f.theta),
                    json_number(f.plug_in),
                    json_number(f.correction),
                    json_number(f.s2_m),
                    json_number(f.s2_alpha),
                    f.fold_size
                )
            })
            .collect();
        parts.push(format!("\"per_fold\":[{}]", folds.join(",")));
        format!("{{{}}}", parts.join(","))
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// `m(Z_i, γ̂)` for every field row.
pub fn functional_values(
    func: &dyn LinearFunctional,
    field: &Dataset,
    learner: &dyn RegressionLearner,
) -> Result<Vec<f64>> {
    if field.is_empty() {
        return Err(Error::EmptySample("field sample"));
    }
    if let Some(first) = func.evaluation_point(field.row(0)) {
        let width = first.len();
        let mut points = Vec::with_capacity(field.nrows() * width);
        for z in field.rows() {
            let p = func.evaluation_point(z).expect("evaluation functional");
            points.extend_from_slice(&p);
        }
        let points = Dataset::new(field.nrows(), width, points)?;
        return predict_batch(learner, &points);
    }
    let dim = learner.input_dim();
    field
        .rows()
        .map(|z| {
            let bad = std::cell::Cell::new(None);
            let v = func.apply(z, &|x: &[f64]| {
                if x.len() != dim {
                    bad.set(Some(x.len()));
                    return f64::NAN;
                }
                learner.predict(x)
            });
            match bad.get() {
                Some(found) => Err(Error::shape("functional evaluation point", dim, found)),
                None => Ok(v),
            }
        })
        .collect()
}

fn check_training(x: &Dataset, y: &[f64], dict: &DictionarySpec) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptySample("training sample"));
    }
    if x.nrows() != y.len() {
        return Err(Error::shape("training response", x.nrows(), y.len()));
    }
    if x.ncols() != dict.input_dim() {
        return Err(Error::shape("training columns", dict.input_dim(), x.ncols()));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    Ok(())
}

fn residuals(y: &[f64], fitted: &[f64]) -> Vec<f64> {
    y.iter().zip(fitted).map(|(a, b)| a - b).collect()
}

// ---------------------------------------------------------------------------
// Cross-fitting
// ---------------------------------------------------------------------------

/// The representer side of a cross-fit estimate, which does not depend on `γ̂`.
#[derive(Debug, Clone)]
pub struct CrossfitPrep {
    pub plan: FoldPlan,
    pub m_hat: Vec<f64>,
    pub riesz: Vec<RieszFit>,
    /// `α̂_ℓ` on the rows of fold `ℓ`, in increasing row order.
    pub alpha: Vec<Vec<f64>>,
    pub tau_bar: f64,
}

/// Fits `ρ̂_ℓ` on every fold complement.
pub fn prepare_crossfit(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    x: &Dataset,
    field: &Dataset,
    plan: &FoldPlan,
    r_riesz: PenaltyRule,
    opts: &DebiasOptions,
) -> Result<CrossfitPrep> {
    if plan.num_rows() != x.nrows() {
        return Err(Error::shape("fold plan rows", x.nrows(), plan.num_rows()));
    }
    if x.ncols() != dict.input_dim() {
        return Err(Error::shape("training columns", dict.input_dim(), x.ncols()));
    }
    let design = dict.expand_matrix(x)?;
    let m_hat = field_moments(func, dict, field)?;
    let tau_bar = opts.trim.tau_bar(field.nrows())?;
    let per_fold: Vec<Result<(RieszFit, Vec<f64>)>> = (0..plan.num_folds())
        .into_par_iter()
        .map(|l| {
            let comp = plan.complement(l);
            if comp.is_empty() {
                return Err(Error::FoldTooSmall {
                    fold: l,
                    size: 0,
                    required: 1,
                });
            }
            let moments = RieszProblemMoments {
                m_hat: m_hat.clone(),
                q_hat: second_moment(&design, Some(&comp))?,
                n_field: field.nrows(),
                n_train: comp.len(),
            };
            let r = r_riesz.resolve(dict.output_dim(), comp.len());
            let fit = fit_riesz_with(&moments, r, &opts.solver)?;
            let alpha = fit.alpha_design(&design.select(&plan.fold(l)))?;
            Ok((fit, alpha))
        })
        .collect();
    let mut riesz = Vec::with_capacity(plan.num_folds());
    let mut alpha = Vec::with_capacity(plan.num_folds());
    for r in per_fold {
        let (f, a) = r?;
        riesz.push(f);
        alpha.push(a);
    }
    Ok(CrossfitPrep {
        plan: plan.clone(),
        m_hat,
        riesz,
        alpha,
        tau_bar,
    })
}

/// Cross-fit estimate from per-fold regressions already trained on the fold complements.
pub fn crossfit_with_learners(
    prep: &CrossfitPrep,
    func: &dyn LinearFunctional,
    x: &Dataset,
    y: &[f64],
    field: &Dataset,
    learners: &[&dyn RegressionLearner],
    opts: &DebiasOptions,
) -> Result<DebiasResult> {
    let plan = &prep.plan;
    if learners.len() != plan.num_folds() {
        return Err(Error::shape("per-fold learners", plan.num_folds(), learners.len()));
    }
    if x.nrows() != y.len() || plan.num_rows() != x.nrows() {
        return Err(Error::shape("training response", x.nrows(), y.len()));
    }
    let folds: Vec<Result<FoldComponents>> = (0..plan.num_folds())
        .into_par_iter()
        .map(|l| {
            let idx = plan.fold(l);
            let m_values = functional_values(func, field, learners[l])?;
            let fitted = predict_batch(learners[l], &x.select(&idx))?;
            let y_fold: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            FoldComponents::from_values(&m_values, &prep.alpha[l], &residuals(&y_fold, &fitted), prep.tau_bar)
        })
        .collect();
    let folds = folds.into_iter().collect::<Result<Vec<_>>>()?;
    combine(folds, field.nrows(), opts.variance, opts.level)
}

/// Cross-fit debiased estimate, refitting `γ̂_ℓ` and `ρ̂_ℓ` on each fold complement.
#[allow(clippy::too_many_arguments)]
pub fn crossfit_estimate(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    x: &Dataset,
    y: &[f64],
    field: &Dataset,
    plan: &FoldPlan,
    factory: &dyn LearnerFactory,
    r_riesz: PenaltyRule,
    opts: &DebiasOptions,
) -> Result<DebiasResult> {
    check_training(x, y, dict)?;
    let required = factory.min_rows();
    for l in 0..plan.num_folds() {
        let size = plan.num_rows() - plan.fold_sizes()[l];
        if size < required {
            return Err(Error::FoldTooSmall { fold: l, size, required });
        }
    }
    let prep = prepare_crossfit(func, dict, x, field, plan, r_riesz, opts)?;
    let fitted: Vec<Result<Box<dyn RegressionLearner>>> = (0..plan.num_folds())
        .into_par_iter()
        .map(|l| {
            let comp = plan.complement(l);
            let y_comp: Vec<f64> = comp.iter().map(|&i| y[i]).collect();
            factory.fit(&x.select(&comp), &y_comp)
        })
        .collect();
    let learners = fitted.into_iter().collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn RegressionLearner> = learners.iter().map(|b| b.as_ref()).collect();
    crossfit_with_learners(&prep, func, x, y, field, &refs, opts)
}

// ---------------------------------------------------------------------------
// Single-sample (no cross-fit) estimators
// ---------------------------------------------------------------------------

/// The training-data statistics the no-cross-fit estimator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummaries {
    /// `Q̂ = (1/T) Σ b(X_t) b(X_t)'`.
    pub q_hat: nalgebra::DMatrix<f64>,
    /// `(1/T) Σ b(X_t)(Y_t − γ̂(X_t))`.
    pub residual_crossprod: Vec<f64>,
    /// `(1/T) Σ b(X_t) b(X_t)' (Y_t − γ̂(X_t))²`, giving the untrimmed `ŝ²_α = ρ̂'Ωρ̂`.
    pub residual_weighted_moment: nalgebra::DMatrix<f64>,
    pub n_train: usize,
}

pub fn training_summaries(
    dict: &DictionarySpec,
    x: &Dataset,
    y: &[f64],
    gamma_hat: &[f64],
) -> Result<TrainingSummaries> {
    check_training(x, y, dict)?;
    if gamma_hat.len() != y.len() {
        return Err(Error::shape("fitted values", y.len(), gamma_hat.len()));
    }
    let design = dict.expand_matrix(x)?;
    summaries_from_design(&design, &residuals(y, gamma_hat))
}

fn summaries_from_design(design: &DesignMatrix, resid: &[f64]) -> Result<TrainingSummaries> {
    let t = design.nrows() as f64;
    let j = design.ncols();
    let mut omega = nalgebra::DMatrix::zeros(j, j);
    for (b, e) in design.rows().zip(resid) {
        let e2 = e * e;
        for a in 0..j {
            let w = b[a] * e2;
            for c in a..j {
                omega[(a, c)] += w * b[c];
            }
        }
    }
    for a in 0..j {
        for c in a..j {
            omega[(a, c)] /= t;
            omega[(c, a)] = omega[(a, c)];
        }
    }
    Ok(TrainingSummaries {
        q_hat: second_moment(design, None)?,
        residual_crossprod: design.mean_cross(resid),
        residual_weighted_moment: omega,
        n_train: design.nrows(),
    })
}

fn riesz_from_summaries(
    m_hat: &[f64],
    summaries: &TrainingSummaries,
    n_field: usize,
    r_riesz: PenaltyRule,
    solver: &SolverOptions,
) -> Result<RieszFit> {
    let moments = RieszProblemMoments {
        m_hat: m_hat.to_vec(),
        q_hat: summaries.q_hat.clone(),
        n_field,
        n_train: summaries.n_train,
    };
    fit_riesz_with(&moments, r_riesz.resolve(m_hat.len(), summaries.n_train), solver)
}

/// No-cross-fit estimate from field data, a fitted `γ̂` and training summaries only.
///
/// `ŝ²_α` is `ρ̂'Ωρ̂`, i.e. without trimming, since per-row values are not available.
pub fn estimate_from_summaries(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    field: &Dataset,
    gamma: &dyn RegressionLearner,
    summaries: &TrainingSummaries,
    r_riesz: PenaltyRule,
    opts: &DebiasOptions,
) -> Result<DebiasResult> {
    let m_hat = field_moments(func, dict, field)?;
    let riesz = riesz_from_summaries(&m_hat, summaries, field.nrows(), r_riesz, &opts.solver)?;
    let m_values = functional_values(func, field, gamma)?;
    let correction = dot(&riesz.rho, &summaries.residual_crossprod);
    let rho = nalgebra::DVector::from_column_slice(&riesz.rho);
    let s2_alpha = rho.dot(&(&summaries.residual_weighted_moment * &rho));
    let comp = FoldComponents::assemble(&m_values, mean(&m_values), correction, s2_alpha, summaries.n_train)?;
    combine(vec![comp], field.nrows(), opts.variance, opts.level)
}

/// No-cross-fit estimate with a given `γ̂` fitted on `(x, y)`; `ρ̂` uses `Q̂` from all of `x`.
///
/// The correction is computed as `ρ̂'[(1/T) Σ b(X_t) e_t]`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_with_fitted(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    x: &Dataset,
    y: &[f64],
    field: &Dataset,
    gamma: &dyn RegressionLearner,
    r_riesz: PenaltyRule,
    opts: &DebiasOptions,
) -> Result<DebiasResult> {
    check_training(x, y, dict)?;
    let fitted = predict_batch(gamma, x)?;
    let design = dict.expand_matrix(x)?;
    let resid = residuals(y, &fitted);
    let summaries = summaries_from_design(&design, &resid)?;
    let m_hat = field_moments(func, dict, field)?;
    let riesz = riesz_from_summaries(&m_hat, &summaries, field.nrows(), r_riesz, &opts.solver)?;
    single_sample_result(func, field, gamma, &design, &resid, &riesz, &summaries, opts)
}

#[allow(clippy::too_many_arguments)]
fn single_sample_result(
    func: &dyn LinearFunctional,
    field: &Dataset,
    gamma: &dyn RegressionLearner,
    design: &DesignMatrix,
    resid: &[f64],
    riesz: &RieszFit,
    summaries: &TrainingSummaries,
    opts: &DebiasOptions,
) -> Result<DebiasResult> {
    let tau_bar = opts.trim.tau_bar(field.nrows())?;
    let m_values = functional_values(func, field, gamma)?;
    let alpha = riesz.alpha_design(design)?;
    let correction = dot(&riesz.rho, &summaries.residual_crossprod);
    let s2_alpha = alpha
        .iter()
        .zip(resid)
        .map(|(&a, &e)| (trim(a, tau_bar) * e).powi(2))
        .sum::<f64>()
        / resid.len() as f64;
    let comp = FoldComponents::assemble(&m_values, mean(&m_values), correction, s2_alpha, resid.len())?;
    combine(vec![comp], field.nrows(), opts.variance, opts.level)
}

/// Lasso regression on all training data followed by the single-sample correction.
#[allow(clippy::too_many_arguments)]
pub fn nocrossfit_estimate(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    x: &Dataset,
    y: &[f64],
    field: &Dataset,
    r_gamma: PenaltyRule,
    r_riesz: PenaltyRule,
    opts: &DebiasOptions,
) -> Result<DebiasResult> {
    check_training(x, y, dict)?;
    let design = dict.expand_matrix(x)?;
    let r = r_gamma.resolve(dict.output_dim(), x.nrows());
    let gamma = crate::learners::LassoLearner {
        dict: dict.clone(),
        fit: lasso_regression(&design, y, r, &opts.solver)?,
    };
    estimate_with_fitted(func, dict, x, y, field, &gamma, r_riesz, opts)
}

/// Correction `(1/N) Σ m(Z_i, b'φ̂) = M̂'φ̂` with `φ̂ = (B'B)⁺B'(y − γ̂)`.
///
/// The variance uses the unpenalized representer `α̂ = b'Q̂⁺M̂`, which gives the
/// same correction.
pub fn pseudo_inverse_estimate(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    x: &Dataset,
    y: &[f64],
    field: &Dataset,
    gamma: &dyn RegressionLearner,
    opts: &DebiasOptions,
) -> Result<DebiasResult> {
    check_training(x, y, dict)?;
    let tau_bar = opts.trim.tau_bar(field.nrows())?;
    let fitted = predict_batch(gamma, x)?;
    let design = dict.expand_matrix(x)?;
    let resid = residuals(y, &fitted);
    let phi = pseudo_inverse_debias_coefficients(&design, y, &fitted)?;
    let m_hat = field_moments(func, dict, field)?;
    let correction = dot(&m_hat, &phi);
    let moments = RieszProblemMoments {
        m_hat,
        q_hat: second_moment(&design, None)?,
        n_field: field.nrows(),
        n_train: x.nrows(),
    };
    let alpha = pseudo_inverse_representer(&moments)?.alpha_design(&design)?;
    let s2_alpha = alpha
        .iter()
        .zip(&resid)
        .map(|(&a, &e)| (trim(a, tau_bar) * e).powi(2))
        .sum::<f64>()
        / resid.len() as f64;
    let m_values = functional_values(func, field, gamma)?;
    let comp = FoldComponents::assemble(&m_values, mean(&m_values), correction, s2_alpha, resid.len())?;
    combine(vec![comp], field.nrows(), opts.variance, opts.level)
}

/// Two-sample scheme: `γ̂` and `Q̂` come from the training sample `x`, the
/// correction is averaged over a second sample `(v, y_v)` from the same
/// distribution.
#[allow(clippy::too_many_arguments)]
pub fn sample_split_estimate(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    x: &Dataset,
    field: &Dataset,
    v: &Dataset,
    y_v: &[f64],
    gamma: &dyn RegressionLearner,
    r_riesz: PenaltyRule,
    opts: &DebiasOptions,
) -> Result<DebiasResult> {
    check_training(v, y_v, dict)?;
    if x.is_empty() {
        return Err(Error::EmptySample("training sample"));
    }
    let tau_bar = opts.trim.tau_bar(field.nrows())?;
    let moments = RieszProblemMoments {
        m_hat: field_moments(func, dict, field)?,
        q_hat: second_moment(&dict.expand_matrix(x)?, None)?,
        n_field: field.nrows(),
        n_train: x.nrows(),
    };
    let riesz = fit_riesz_with(&moments, r_riesz.resolve(dict.output_dim(), x.nrows()), &opts.solver)?;
    let v_design = dict.expand_matrix(v)?;
    let alpha = riesz.alpha_design(&v_design)?;
    let resid = residuals(y_v, &predict_batch(gamma, v)?);
    let m_values = functional_values(func, field, gamma)?;
    let comp = FoldComponents::from_values(&m_values, &alpha, &resid, tau_bar)?;
    combine(vec![comp], field.nrows(), opts.variance, opts.level)
}

/// Plug-in average `(1/N) Σ m(Z_i, γ̂)` with its field-only standard error.
pub fn plug_in_estimate(
    func: &dyn LinearFunctional,
    field: &Dataset,
    gamma: &dyn RegressionLearner,
    level: f64,
) -> Result<DebiasResult> {
    let m_values = functional_values(func, field, gamma)?;
    let comp = FoldComponents::assemble(&m_values, mean(&m_values), 0.0, 0.0, field.nrows())?;
    let mut out = combine(vec![comp], field.nrows(), VarianceMode::Printed, level)?;
    out.n_train = 0;
    out.xi_hat = f64::NAN;
    Ok(out)
}
