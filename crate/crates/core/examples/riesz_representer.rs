//! Fit the debiasing function for the mean outcome under a mean shift.
//!
//! With standard normal training covariates and field covariates shifted by
//! `μ`, the representer is the density ratio `exp(μ'x − ‖μ‖²/2)`. A quadratic
//! dictionary gives its best approximation in the training `L²` norm.

use covshift_dml::featmap::DictionarySpec;
use covshift_dml::riesz::{compute_moments, fit_riesz, MeanOutcome};
use covshift_dml::solvers::default_penalty;
use covshift_dml::{Dataset, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng, n: usize, k: usize, shift: f64) -> Result<Dataset> {
    Dataset::new(n, k, (0..n * k).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect())
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (k, mu) = (2, 0.4);
    let train = normal(&mut rng, 20_000, k, 0.0)?;
    let field = normal(&mut rng, 20_000, k, mu)?;
    let dict = DictionarySpec::quadratic(k)?;
    let moments = compute_moments(&MeanOutcome, &dict, &field, &train)?;

    for r in [0.0, default_penalty(0.5, dict.output_dim(), train.nrows()), 0.1] {
        let fit = fit_riesz(&moments, r)?;
        println!("r = {r:.4}: rho = {:?}", fit.rho.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        for x in [[0.0, 0.0], [1.0, 1.0], [-1.0, 0.5]] {
            let truth = (mu * (x[0] + x[1]) - k as f64 * mu * mu / 2.0).exp();
            println!("   alpha({x:?}) = {:.3}   density ratio = {truth:.3}", fit.alpha(&dict, &x)?);
        }
    }

    // Without a shift the representer is identically one.
    let same = normal(&mut rng, 20_000, k, 0.0)?;
    let fit = fit_riesz(&compute_moments(&MeanOutcome, &dict, &same, &train)?, 0.0)?;
    println!("no shift: alpha(0.7, -0.3) = {:.3}", fit.alpha(&dict, &[0.7, -0.3])?);
    Ok(())
}
