//! Coordinate descent for the two ℓ¹-penalized programs used by the estimators.
//!
//! Both programs share one form. With `M` a linear term and `Q` a positive
//! semidefinite curvature matrix the objective is
//!
//! ```text
//! −2 M'ρ + ρ'Qρ + 2 r Σ_j w_j |ρ_j|
//! ```
//!
//! and the optimality (KKT) conditions read `M_j − (Qρ)_j = r w_j sign(ρ_j)`
//! on the support and `|M_j − (Qρ)_j| ≤ r w_j` off it. The Lasso regression
//! `(1/T)‖y − Bβ‖² + 2r‖β‖₁` is the same program with `M = B'y/T`,
//! `Q = B'B/T`, but it is solved here on the residual vector directly so
//! that `B'B` is never formed.
//!
//! Each sweep is followed by a KKT check. Once the support has settled, an
//! optional polishing step solves the stationarity equations on the active
//! set exactly and keeps the result only if signs are preserved and the
//! objective does not increase.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{dot, DesignMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Largest coordinate change in a sweep below which the iterate is stable.
    pub coef_tol: f64,
    /// Largest admissible KKT violation at convergence.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
    /// Leave coordinate 0 (the dictionary intercept) unpenalized.
    pub exempt_intercept: bool,
    /// Solve in unit-second-moment column scaling and map back.
    pub standardize: bool,
    /// Active-set Newton polishing between sweeps.
    pub polish: bool,
    /// Record the objective after every sweep in `LassoFit::objective_trace`.
    pub track_objective: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            coef_tol: 1e-8,
            kkt_tol: 1e-6,
            max_sweeps: 10_000,
            exempt_intercept: false,
            standardize: false,
            polish: true,
            track_objective: false,
        }
    }
}

/// Solution of an ℓ¹-penalized program together with its certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub penalty: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_kkt_violation: f64,
    /// Objective at the returned coefficients (in the solver's scaling).
    pub objective: f64,
    pub objective_trace: Vec<f64>,
}

impl LassoFit {
    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|c| c.abs()).sum()
    }

    pub fn support_size(&self) -> usize {
        self.coefficients.iter().filter(|c| **c != 0.0).count()
    }
}

/// `min_ρ −2 M'ρ + ρ'Qρ + 2r‖ρ‖₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedQuadraticProblem {
    linear: Vec<f64>,
    quadratic: DMatrix<f64>,
    penalty: f64,
}

impl PenalizedQuadraticProblem {
    /// Builds the problem, symmetrizing `quadratic` as `(Q + Q')/2`.
    pub fn new(linear: Vec<f64>, quadratic: DMatrix<f64>, penalty: f64) -> Result<Self> {
        let j = linear.len();
        if quadratic.nrows() != j || quadratic.ncols() != j {
            return Err(Error::shape("quadratic term", j, quadratic.nrows()));
        }
        if !(penalty >= 0.0) || !penalty.is_finite() {
            return Err(Error::Config(format!("penalty must be finite and >= 0, got {penalty}")));
        }
        if linear.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear term"));
        }
        if quadratic.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quadratic term"));
        }
        let quadratic = (&quadratic + quadratic.transpose()) * 0.5;
        Ok(Self {
            linear,
            quadratic,
            penalty,
        })
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.quadratic
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn with_penalty(&self, penalty: f64) -> Result<Self> {
        Self::new(self.linear.clone(), self.quadratic.clone(), penalty)
    }

    /// Objective value at `rho` with every coordinate penalized.
    pub fn objective(&self, rho: &[f64]) -> f64 {
        let r = DVector::from_column_slice(rho);
        let qr = &self.quadratic * &r;
        -2.0 * dot(&self.linear, rho) + r.dot(&qr) + 2.0 * self.penalty * l1(rho)
    }
}

pub fn soft_threshold(z: f64, r: f64) -> f64 {
    if z > r {
        z - r
    } else if z < -r {
        z + r
    } else {
        0.0
    }
}

/// Plug-in penalty level `c · sqrt(ln J / n)`.
pub fn default_penalty(c: f64, num_features: usize, n: usize) -> f64 {
    c * ((num_features.max(1) as f64).ln() / n.max(1) as f64).sqrt()
}

/// Constant in the default rate rule.
pub const DEFAULT_PENALTY_C: f64 = 0.5;

/// How a penalty level is chosen for a given problem size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyRule {
    Fixed(f64),
    /// `c · sqrt(ln J / n)`.
    Rate { c: f64 },
}

impl Default for PenaltyRule {
    fn default() -> Self {
        PenaltyRule::Rate { c: DEFAULT_PENALTY_C }
    }
}

impl PenaltyRule {
    pub fn resolve(&self, num_features: usize, n: usize) -> f64 {
        match *self {
            PenaltyRule::Fixed(r) => r,
            PenaltyRule::Rate { c } => default_penalty(c, num_features, n),
        }
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

// ---------------------------------------------------------------------------
// Coordinate descent engine
// ---------------------------------------------------------------------------

trait CoordinateProblem {
    fn dim(&self) -> usize;
    fn curvature(&self, j: usize) -> f64;
    /// `M_j − (Qρ)_j` at the current iterate.
    fn gradient(&self, j: usize) -> f64;
    fn step(&mut self, j: usize, delta: f64);
    /// Smooth part of the objective at the current iterate.
    fn smooth_objective(&self) -> f64;
    /// Smooth part at an arbitrary point, without moving the iterate.
    fn smooth_objective_at(&self, rho: &[f64]) -> f64;
    fn reset(&mut self, rho: &[f64]);
    /// `(Q_AA, M_A)` for the index set `active`.
    fn active_system(&self, active: &[usize]) -> (DMatrix<f64>, DVector<f64>);
}

struct QuadraticState<'a> {
    q: &'a DMatrix<f64>,
    m: &'a [f64],
    q_rho: Vec<f64>,
    rho: Vec<f64>,
}

impl<'a> QuadraticState<'a> {
    fn new(q: &'a DMatrix<f64>, m: &'a [f64], rho: &[f64]) -> Self {
        let mut s = Self {
            q,
            m,
            q_rho: vec![0.0; m.len()],
            rho: rho.to_vec(),
        };
        s.reset(rho);
        s
    }
}

impl CoordinateProblem for QuadraticState<'_> {
    fn dim(&self) -> usize {
        self.m.len()
    }

    fn curvature(&self, j: usize) -> f64 {
        self.q[(j, j)]
    }

    fn gradient(&self, j: usize) -> f64 {
        self.m[j] - self.q_rho[j]
    }

    fn step(&mut self, j: usize, delta: f64) {
        self.rho[j] += delta;
        for (acc, q) in self.q_rho.iter_mut().zip(self.q.column(j).iter()) {
            *acc += q * delta;
        }
    }

    fn smooth_objective(&self) -> f64 {
        -2.0 * dot(self.m, &self.rho) + dot(&self.rho, &self.q_rho)
    }

    fn smooth_objective_at(&self, rho: &[f64]) -> f64 {
        let r = DVector::from_column_slice(rho);
        -2.0 * dot(self.m, rho) + r.dot(&(self.q * &r))
    }

    fn reset(&mut self, rho: &[f64]) {
        self.rho.copy_from_slice(rho);
        let r = DVector::from_column_slice(rho);
        let qr = self.q * r;
        self.q_rho.copy_from_slice(qr.as_slice());
    }

    fn active_system(&self, active: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let qa = DMatrix::from_fn(active.len(), active.len(), |a, b| self.q[(active[a], active[b])]);
        let ma = DVector::from_iterator(active.len(), active.iter().map(|&j| self.m[j]));
        (qa, ma)
    }
}

struct ResidualState {
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    resid: Vec<f64>,
    curv: Vec<f64>,
    inv_t: f64,
}

impl ResidualState {
    fn new(columns: Vec<Vec<f64>>, y: Vec<f64>, beta: &[f64]) -> Self {
        let inv_t = 1.0 / y.len() as f64;
        let curv = columns.iter().map(|c| inv_t * dot(c, c)).collect();
        let mut s = Self {
            columns,
            resid: y.clone(),
            y,
            curv,
            inv_t,
        };
        s.reset(beta);
        s
    }
}

impl CoordinateProblem for ResidualState {
    fn dim(&self) -> usize {
        self.columns.len()
    }

    fn curvature(&self, j: usize) -> f64 {
        self.curv[j]
    }

    fn gradient(&self, j: usize) -> f64 {
        self.inv_t * dot(&self.columns[j], &self.resid)
    }

    fn step(&mut self, j: usize, delta: f64) {
        for (e, b) in self.resid.iter_mut().zip(&self.columns[j]) {
            *e -= delta * b;
        }
    }

    fn smooth_objective(&self) -> f64 {
        self.inv_t * dot(&self.resid, &self.resid)
    }

    fn smooth_objective_at(&self, beta: &[f64]) -> f64 {
        let mut e = self.y.clone();
        for (col, &b) in self.columns.iter().zip(beta) {
            if b != 0.0 {
                e.iter_mut().zip(col).for_each(|(e, c)| *e -= b * c);
            }
        }
        self.inv_t * dot(&e, &e)
    }

    fn reset(&mut self, beta: &[f64]) {
        self.resid.copy_from_slice(&self.y);
        for (col, &b) in self.columns.iter().zip(beta) {
            if b != 0.0 {
                self.resid.iter_mut().zip(col).for_each(|(e, c)| *e -= b * c);
            }
        }
    }

    fn active_system(&self, active: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let n = active.len();
        let mut qa = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = self.inv_t * dot(&self.columns[active[a]], &self.columns[active[b]]);
                qa[(a, b)] = v;
                qa[(b, a)] = v;
            }
        }
        let ma = DVector::from_iterator(
            n,
            active.iter().map(|&j| self.inv_t * dot(&self.columns[j], &self.y)),
        );
        (qa, ma)
    }
}

fn kkt_violation<P: CoordinateProblem>(p: &P, rho: &[f64], pen: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..p.dim() {
        if p.curvature(j) <= 0.0 {
            continue;
        }
        let g = p.gradient(j);
        let v = if rho[j] != 0.0 {
            (g - pen[j] * rho[j].signum()).abs()
        } else {
            (g.abs() - pen[j]).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn penalty_term(rho: &[f64], pen: &[f64]) -> f64 {
    2.0 * rho.iter().zip(pen).map(|(r, p)| p * r.abs()).sum::<f64>()
}

/// Newton step on the current support; `None` if it breaks sign consistency
/// or does not lower the objective.
fn polish<P: CoordinateProblem>(p: &P, rho: &[f64], pen: &[f64]) -> Option<Vec<f64>> {
    let active: Vec<usize> = (0..rho.len()).filter(|&j| rho[j] != 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let (qa, ma) = p.active_system(&active);
    let rhs = DVector::from_iterator(
        active.len(),
        active.iter().enumerate().map(|(a, &j)| ma[a] - pen[j] * rho[j].signum()),
    );
    let sol = qa.cholesky()?.solve(&rhs);
    let mut cand = vec![0.0; rho.len()];
    for (a, &j) in active.iter().enumerate() {
        let v = sol[a];
        if !v.is_finite() || (pen[j] > 0.0 && v.signum() != rho[j].signum()) {
            return None;
        }
        cand[j] = v;
    }
    let current = p.smooth_objective() + penalty_term(rho, pen);
    let proposed = p.smooth_objective_at(&cand) + penalty_term(&cand, pen);
    (proposed <= current).then_some(cand)
}

struct Outcome {
    iterations: usize,
    converged: bool,
    kkt: f64,
    objective: f64,
    trace: Vec<f64>,
}

fn coordinate_descent<P: CoordinateProblem>(
    p: &mut P,
    rho: &mut [f64],
    pen: &[f64],
    opts: &SolverOptions,
) -> Outcome {
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt = f64::INFINITY;
    const POLISH_EVERY: usize = 20;

    while iterations < opts.max_sweeps {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p.dim() {
            let q = p.curvature(j);
            if q <= 0.0 {
                if rho[j] != 0.0 {
                    p.step(j, -rho[j]);
                    rho[j] = 0.0;
                }
                continue;
            }
            let z = p.gradient(j) + q * rho[j];
            let next = soft_threshold(z, pen[j]) / q;
            let delta = next - rho[j];
            if delta != 0.0 {
                p.step(j, delta);
                rho[j] = next;
                max_change = max_change.max(delta.abs());
            }
        }
        kkt = kkt_violation(p, rho, pen);
        if opts.track_objective {
            trace.push(p.smooth_objective() + penalty_term(rho, pen));
        }
        if max_change < opts.coef_tol && kkt <= opts.kkt_tol {
            converged = true;
            break;
        }
        if opts.polish && (max_change < opts.coef_tol || iterations % POLISH_EVERY == 0) {
            if let Some(cand) = polish(p, rho, pen) {
                rho.copy_from_slice(&cand);
                p.reset(rho);
            }
        }
    }
    Outcome {
        iterations,
        converged,
        kkt,
        objective: p.smooth_objective() + penalty_term(rho, pen),
        trace,
    }
}

fn penalty_weights(dim: usize, r: f64, opts: &SolverOptions) -> Vec<f64> {
    let mut pen = vec![r; dim];
    if opts.exempt_intercept && dim > 0 {
        pen[0] = 0.0;
    }
    pen
}

fn check_penalty(r: f64) -> Result<()> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::Config(format!("penalty must be finite and >= 0, got {r}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Public solvers
// ---------------------------------------------------------------------------

/// `argmin_β (1/T)‖y − Bβ‖² + 2r‖β‖₁`, cold-started at zero.
pub fn lasso_regression(
    b: &DesignMatrix,
    y: &[f64],
    r: f64,
    opts: &SolverOptions,
) -> Result<LassoFit> {
    lasso_regression_warm(b, y, r, opts, None)
}

pub fn lasso_regression_warm(
    b: &DesignMatrix,
    y: &[f64],
    r: f64,
    opts: &SolverOptions,
    init: Option<&[f64]>,
) -> Result<LassoFit> {
    if b.nrows() != y.len() {
        return Err(Error::shape("response length", b.nrows(), y.len()));
    }
    if y.is_empty() {
        return Err(Error::EmptySample("lasso regression needs at least one row"));
    }
    check_penalty(r)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    let j = b.ncols();
    let mut columns: Vec<Vec<f64>> = (0..j).map(|k| b.column(k)).collect();
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    let t = y.len() as f64;
    let scales: Vec<f64> = if opts.standardize {
        columns
            .iter()
            .map(|c| {
                let s = (dot(c, c) / t).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; j]
    };
    if opts.standardize {
        for (c, s) in columns.iter_mut().zip(&scales) {
            c.iter_mut().for_each(|v| *v /= s);
        }
    }
    let mut coef: Vec<f64> = match init {
        Some(w) if w.len() == j => w.iter().zip(&scales).map(|(w, s)| w * s).collect(),
        Some(w) => return Err(Error::shape("warm start", j, w.len())),
        None => vec![0.0; j],
    };
    let pen = penalty_weights(j, r, opts);
    let mut state = ResidualState::new(columns, y.to_vec(), &coef);
    let out = coordinate_descent(&mut state, &mut coef, &pen, opts);
    let coefficients = coef.iter().zip(&scales).map(|(c, s)| c / s).collect();
    Ok(LassoFit {
        coefficients,
        penalty: r,
        iterations: out.iterations,
        converged: out.converged,
        max_kkt_violation: out.kkt,
        objective: out.objective,
        objective_trace: out.trace,
    })
}

/// `argmin_ρ −2M'ρ + ρ'Qρ + 2r‖ρ‖₁`, cold-started at zero.
pub fn penalized_quadratic(prob: &PenalizedQuadraticProblem, opts: &SolverOptions) -> Result<LassoFit> {
    penalized_quadratic_warm(prob, opts, None)
}

pub fn penalized_quadratic_warm(
    prob: &PenalizedQuadraticProblem,
    opts: &SolverOptions,
    init: Option<&[f64]>,
) -> Result<LassoFit> {
    let j = prob.dim();
    let pen = penalty_weights(j, prob.penalty, opts);
    for k in 0..j {
        if prob.quadratic[(k, k)] <= 0.0 && pen[k] == 0.0 && prob.linear[k] != 0.0 {
            return Err(Error::DegenerateCoordinate { index: k });
        }
    }
    let scales: Vec<f64> = (0..j)
        .map(|k| {
            let d = prob.quadratic[(k, k)];
            if opts.standardize && d > 0.0 {
                d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let (q, m) = if opts.standardize {
        let q = DMatrix::from_fn(j, j, |a, b| prob.quadratic[(a, b)] / (scales[a] * scales[b]));
        let m: Vec<f64> = prob.linear.iter().zip(&scales).map(|(m, s)| m / s).collect();
        (q, m)
    } else {
        (prob.quadratic.clone(), prob.linear.clone())
    };
    let mut rho: Vec<f64> = match init {
        Some(w) if w.len() == j => w.iter().zip(&scales).map(|(w, s)| w * s).collect(),
        Some(w) => return Err(Error::shape("warm start", j, w.len())),
        None => vec![0.0; j],
    };
    let mut state = QuadraticState::new(&q, &m, &rho);
    let out = coordinate_descent(&mut state, &mut rho, &pen, opts);
    let coefficients = rho.iter().zip(&scales).map(|(c, s)| c / s).collect();
    Ok(LassoFit {
        coefficients,
        penalty: prob.penalty,
        iterations: out.iterations,
        converged: out.converged,
        max_kkt_violation: out.kkt,
        objective: out.objective,
        objective_trace: out.trace,
    })
}

/// Lasso fits along `grid`, each warm-started from the previous one.
pub fn lasso_path(
    b: &DesignMatrix,
    y: &[f64],
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<LassoFit>> {
    let mut fits: Vec<LassoFit> = Vec::with_capacity(grid.len());
    for &r in grid {
        let init = fits.last().map(|f| f.coefficients.clone());
        fits.push(lasso_regression_warm(b, y, r, opts, init.as_deref())?);
    }
    Ok(fits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPenalty {
    pub best: f64,
    pub grid: Vec<f64>,
    pub mean_squared_error: Vec<f64>,
}

/// K-fold cross-validated choice of the regression penalty from `grid`.
pub fn cv_penalty(
    b: &DesignMatrix,
    y: &[f64],
    grid: &[f64],
    num_folds: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CvPenalty> {
    if grid.is_empty() {
        return Err(Error::Config("penalty grid is empty".into()));
    }
    if num_folds < 2 || num_folds > y.len() {
        return Err(Error::Config(format!(
            "cv needs 2 <= folds <= rows, got {num_folds} folds for {} rows",
            y.len()
        )));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut sse = vec![0.0; grid.len()];
    for fold in 0..num_folds {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..order.len()).partition(|&i| i % num_folds == fold);
        let test: Vec<usize> = test.iter().map(|&i| order[i]).collect();
        let train: Vec<usize> = train.iter().map(|&i| order[i]).collect();
        let b_train = b.select(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fits = lasso_path(&b_train, &y_train, grid, opts)?;
        for (acc, fit) in sse.iter_mut().zip(&fits) {
            for &i in &test {
                let e = y[i] - dot(b.row(i), &fit.coefficients);
                *acc += e * e;
            }
        }
    }
    let mse: Vec<f64> = sse.iter().map(|s| s / y.len() as f64).collect();
    let best_idx = mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(CvPenalty {
        best: grid[best_idx],
        grid: grid.to_vec(),
        mean_squared_error: mse,
    })
}

/// `(B'y/T, B'B/T)`: the penalized-quadratic form of a Lasso regression.
pub fn regression_moments(b: &DesignMatrix, y: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if b.nrows() != y.len() {
        return Err(Error::shape("response length", b.nrows(), y.len()));
    }
    let m = b.mean_cross(y);
    let bm = b.to_matrix();
    let q = bm.transpose() * &bm / y.len().max(1) as f64;
    Ok((m, q))
}
