//! Estimation of the debiasing (Riesz representer) function.
//!
//! The representer `α₀` of a linear functional `m` satisfies
//! `E[m(Z, Δ)] = E[α₀(X) Δ(X)]` with `Z` drawn from the field distribution and
//! `X` from the training distribution. Restricting `α` to `b(x)'ρ`, it is
//! estimated by
//!
//! ```text
//! ρ̂ = argmin −2 M̂'ρ + ρ'Q̂ρ + 2r‖ρ‖₁,   M̂_j = (1/N) Σ m(Z_i, b_j),   Q̂ = (1/T) Σ b(X_t)b(X_t)'
//! ```
//!
//! so the linear term comes from field data and the curvature from training
//! data.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::data::{dot, Dataset, DesignMatrix};
use crate::error::{Error, Result};
use crate::featmap::DictionarySpec;
use crate::solvers::{penalized_quadratic, LassoFit, PenalizedQuadraticProblem, SolverOptions};

/// A functional `m(z, g)` that is linear in the regression `g`.
pub trait LinearFunctional: Sync {
    fn apply(&self, z: &[f64], g: &dyn Fn(&[f64]) -> f64) -> f64;

    /// For functionals of the form `m(z, g) = g(p(z))`, the point `p(z)`.
    ///
    /// Lets callers evaluate a fitted regression on a whole batch of points.
    fn evaluation_point(&self, _z: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// `(m(z, b_1), ..., m(z, b_J))`.
    ///
    /// The default evaluates the functional once per dictionary element.
    /// Evaluation-type functionals override it with a single expansion.
    fn apply_dictionary(&self, z: &[f64], dict: &DictionarySpec) -> Result<Vec<f64>> {
        let j = dict.output_dim();
        let mut out = Vec::with_capacity(j);
        let err = std::cell::RefCell::new(None);
        for k in 0..j {
            let v = self.apply(z, &|x: &[f64]| match dict.expand(x) {
                Ok(b) => b[k],
                Err(e) => {
                    err.borrow_mut().get_or_insert_with(|| e.to_string());
                    f64::NAN
                }
            });
            out.push(v);
        }
        match err.into_inner() {
            Some(e) => Err(Error::Config(e)),
            None => Ok(out),
        }
    }
}

/// `m(z, γ) = γ(z)`: the mean outcome at the shifted covariates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeanOutcome;

impl LinearFunctional for MeanOutcome {
    fn apply(&self, z: &[f64], g: &dyn Fn(&[f64]) -> f64) -> f64 {
        g(z)
    }

    fn evaluation_point(&self, z: &[f64]) -> Option<Vec<f64>> {
        Some(z.to_vec())
    }

    fn apply_dictionary(&self, z: &[f64], dict: &DictionarySpec) -> Result<Vec<f64>> {
        dict.expand(z)
    }
}

/// How the treatment coordinate enters the regressor vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreatmentPlacement {
    /// The field row holds covariates only; the treatment is inserted at this index.
    Insert(usize),
    /// The field row already has a treatment slot at this index, which is overwritten.
    Substitute(usize),
}

/// `m(z, γ) = γ(d, z)`: the average potential outcome at treatment level `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcome {
    pub placement: TreatmentPlacement,
    pub treatment: f64,
}

impl PotentialOutcome {
    pub fn new(placement: TreatmentPlacement, treatment: f64) -> Self {
        Self {
            placement,
            treatment,
        }
    }

    /// The regressor vector at which `γ` is evaluated for field row `z`.
    pub fn regressors(&self, z: &[f64]) -> Vec<f64> {
        match self.placement {
            TreatmentPlacement::Insert(i) => {
                let mut x = Vec::with_capacity(z.len() + 1);
                let i = i.min(z.len());
                x.extend_from_slice(&z[..i]);
                x.push(self.treatment);
                x.extend_from_slice(&z[i..]);
                x
            }
            TreatmentPlacement::Substitute(i) => {
                let mut x = z.to_vec();
                if let Some(slot) = x.get_mut(i) {
                    *slot = self.treatment;
                }
                x
            }
        }
    }
}

impl LinearFunctional for PotentialOutcome {
    fn apply(&self, z: &[f64], g: &dyn Fn(&[f64]) -> f64) -> f64 {
        g(&self.regressors(z))
    }

    fn evaluation_point(&self, z: &[f64]) -> Option<Vec<f64>> {
        Some(self.regressors(z))
    }

    fn apply_dictionary(&self, z: &[f64], dict: &DictionarySpec) -> Result<Vec<f64>> {
        dict.expand(&self.regressors(z))
    }
}

/// `(M̂, Q̂)` for the representer program.
#[derive(Debug, Clone, PartialEq)]
pub struct RieszProblemMoments {
    pub m_hat: Vec<f64>,
    pub q_hat: DMatrix<f64>,
    pub n_field: usize,
    pub n_train: usize,
}

/// Fitted representer `α̂(x) = b(x)'ρ̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RieszFit {
    pub rho: Vec<f64>,
    pub penalty: f64,
    pub diagnostics: LassoFit,
}

/// `M̂_j = (1/N) Σ_i m(Z_i, b_j)`.
pub fn field_moments(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    field: &Dataset,
) -> Result<Vec<f64>> {
    if field.is_empty() {
        return Err(Error::EmptySample("field sample"));
    }
    let mut acc = vec![0.0; dict.output_dim()];
    for z in field.rows() {
        let mz = func.apply_dictionary(z, dict)?;
        for (a, v) in acc.iter_mut().zip(&mz) {
            *a += v;
        }
    }
    let inv = 1.0 / field.nrows() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field moments"));
    }
    Ok(acc)
}

/// `Q̂ = (1/|rows|) Σ_{t ∈ rows} b_t b_t'` with compensated accumulation.
pub fn second_moment(design: &DesignMatrix, rows: Option<&[usize]>) -> Result<DMatrix<f64>> {
    let j = design.ncols();
    let count = rows.map_or(design.nrows(), |r| r.len());
    if count == 0 {
        return Err(Error::EmptySample("training sample for second moment"));
    }
    let npairs = j * (j + 1) / 2;
    let mut sum = vec![0.0; npairs];
    let mut comp = vec![0.0; npairs];
    let mut accumulate = |b: &[f64]| {
        let mut k = 0;
        for a in 0..j {
            let ba = b[a];
            for c in a..j {
                // Neumaier summation.
                let x = ba * b[c];
                let s = sum[k];
                let t = s + x;
                if s.abs() >= x.abs() {
                    comp[k] += (s - t) + x;
                } else {
                    comp[k] += (x - t) + s;
                }
                sum[k] = t;
                k += 1;
            }
        }
    };
    match rows {
        Some(idx) => idx.iter().for_each(|&i| accumulate(design.row(i))),
        None => design.rows().for_each(&mut accumulate),
    }
    let inv = 1.0 / count as f64;
    let mut q = DMatrix::zeros(j, j);
    let mut k = 0;
    for a in 0..j {
        for c in a..j {
            let v = (sum[k] + comp[k]) * inv;
            q[(a, c)] = v;
            q[(c, a)] = v;
            k += 1;
        }
    }
    Ok(q)
}

pub fn compute_moments(
    func: &dyn LinearFunctional,
    dict: &DictionarySpec,
    field: &Dataset,
    train: &Dataset,
) -> Result<RieszProblemMoments> {
    if train.is_empty() {
        return Err(Error::EmptySample("training sample"));
    }
    let m_hat = field_moments(func, dict, field)?;
    let design = dict.expand_matrix(train)?;
    let q_hat = second_moment(&design, None)?;
    Ok(RieszProblemMoments {
        m_hat,
        q_hat,
        n_field: field.nrows(),
        n_train: train.nrows(),
    })
}

pub fn fit_riesz(moments: &RieszProblemMoments, r: f64) -> Result<RieszFit> {
    fit_riesz_with(moments, r, &SolverOptions::default())
}

pub fn fit_riesz_with(moments: &RieszProblemMoments, r: f64, opts: &SolverOptions) -> Result<RieszFit> {
    let prob = PenalizedQuadraticProblem::new(moments.m_hat.clone(), moments.q_hat.clone(), r)?;
    let diagnostics = penalized_quadratic(&prob, opts)?;
    Ok(RieszFit {
        rho: diagnostics.coefficients.clone(),
        penalty: r,
        diagnostics,
    })
}

impl RieszFit {
    /// Representer with given coefficients and no solver history.
    pub fn from_coefficients(rho: Vec<f64>) -> Self {
        let diagnostics = LassoFit {
            coefficients: rho.clone(),
            penalty: 0.0,
            iterations: 0,
            converged: true,
            max_kkt_violation: 0.0,
            objective: f64::NAN,
            objective_trace: Vec::new(),
        };
        Self {
            rho,
            penalty: 0.0,
            diagnostics,
        }
    }

    pub fn alpha(&self, dict: &DictionarySpec, x: &[f64]) -> Result<f64> {
        evaluate_alpha(self, dict, x)
    }

    /// `α̂` at every row of an already expanded design.
    pub fn alpha_design(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        if design.ncols() != self.rho.len() {
            return Err(Error::shape("representer coefficients", design.ncols(), self.rho.len()));
        }
        Ok(design.mul_vec(&self.rho))
    }
}

pub fn evaluate_alpha(fit: &RieszFit, dict: &DictionarySpec, x: &[f64]) -> Result<f64> {
    if fit.rho.len() != dict.output_dim() {
        return Err(Error::shape("representer coefficients", dict.output_dim(), fit.rho.len()));
    }
    Ok(dot(&dict.expand(x)?, &fit.rho))
}

/// Relative singular-value cutoff for the pseudo-inverse.
pub const PINV_RELATIVE_TOL: f64 = 1e-10;

/// `φ̂ = (B'B)⁺ B'(y − γ̂)`: minimum-norm least-squares coefficients of the
/// residuals on the dictionary.
pub fn pseudo_inverse_debias_coefficients(
    b: &DesignMatrix,
    y: &[f64],
    gamma_hat: &[f64],
) -> Result<Vec<f64>> {
    if y.len() != b.nrows() {
        return Err(Error::shape("response length", b.nrows(), y.len()));
    }
    if gamma_hat.len() != b.nrows() {
        return Err(Error::shape("fitted values length", b.nrows(), gamma_hat.len()));
    }
    if y.iter().chain(gamma_hat).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("residuals"));
    }
    let bm = b.to_matrix();
    if bm.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    let resid = nalgebra::DVector::from_iterator(y.len(), y.iter().zip(gamma_hat).map(|(a, g)| a - g));
    if b.nrows() == 0 || b.ncols() == 0 {
        return Ok(vec![0.0; b.ncols()]);
    }
    let svd = SVD::new(bm, true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(vec![0.0; b.ncols()]);
    }
    let eps = PINV_RELATIVE_TOL * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut phi = nalgebra::DVector::zeros(b.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > eps {
            let coef = u.column(k).dot(&resid) / s;
            phi += vt.row(k).transpose() * coef;
        }
    }
    Ok(phi.as_slice().to_vec())
}

/// Unpenalized representer `ρ̂ = Q̂⁺M̂`, with the same singular-value cutoff
/// as [`pseudo_inverse_debias_coefficients`].
pub fn pseudo_inverse_representer(moments: &RieszProblemMoments) -> Result<RieszFit> {
    let j = moments.m_hat.len();
    if moments.q_hat.nrows() != j || moments.q_hat.ncols() != j {
        return Err(Error::shape("second-moment matrix", j, moments.q_hat.nrows()));
    }
    if moments.q_hat.iter().chain(&moments.m_hat).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("representer moments"));
    }
    let svd = SVD::new(moments.q_hat.clone(), true, true);
    let smax = svd.singular_values.max();
    let mut rho = nalgebra::DVector::zeros(j);
    if smax > 0.0 {
        let m = nalgebra::DVector::from_column_slice(&moments.m_hat);
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > PINV_RELATIVE_TOL * smax {
                rho += vt.row(k).transpose() * (u.column(k).dot(&m) / s);
            }
        }
    }
    Ok(RieszFit::from_coefficients(rho.as_slice().to_vec()))
}
