//! Coordinate-descent Lasso and the equivalent penalized quadratic program.

use covshift_dml::solvers::{
    cv_penalty, default_penalty, lasso_path, lasso_regression, penalized_quadratic, regression_moments,
    PenalizedQuadraticProblem, SolverOptions,
};
use covshift_dml::{DesignMatrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (t, j) = (500, 20);
    let values: Vec<f64> = (0..t * j).map(|_| rng.sample(StandardNormal)).collect();
    let b = DesignMatrix::new(t, j, values)?;
    let mut beta = vec![0.0; j];
    beta[..4].copy_from_slice(&[2.0, -1.5, 1.0, 0.5]);
    let y: Vec<f64> = b
        .mul_vec(&beta)
        .into_iter()
        .map(|m| m + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let opts = SolverOptions::default();
    let r = default_penalty(0.5, j, t);
    let fit = lasso_regression(&b, &y, r, &opts)?;
    println!("r = {r:.4}: support {} of {j}, sweeps {}, KKT {:.2e}", fit.support_size(), fit.iterations, fit.max_kkt_violation);
    println!("first coefficients: {:?}", &fit.coefficients[..5].iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>());

    // The same fit through the quadratic form.
    let (m, q) = regression_moments(&b, &y)?;
    let prob = PenalizedQuadraticProblem::new(m, q, r)?;
    let via_q = penalized_quadratic(&prob, &opts)?;
    let gap = fit
        .coefficients
        .iter()
        .zip(&via_q.coefficients)
        .map(|(a, c)| (a - c).abs())
        .fold(0.0, f64::max);
    println!("max difference between the two routes: {gap:.2e}");

    let grid = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01];
    for f in lasso_path(&b, &y, &grid, &opts)? {
        println!("path r = {:<5} l1 = {:.3} support = {}", f.penalty, f.l1_norm(), f.support_size());
    }
    let cv = cv_penalty(&b, &y, &grid, 5, 1, &opts)?;
    println!("cross-validated penalty: {}", cv.best);
    Ok(())
}
