//! Pseudo-inverse correction versus the lightly penalized representer route.

use covshift_dml::debias::{estimate_with_fitted, pseudo_inverse_estimate, DebiasOptions};
use covshift_dml::featmap::DictionarySpec;
use covshift_dml::learners::FnLearner;
use covshift_dml::riesz::MeanOutcome;
use covshift_dml::solvers::PenaltyRule;
use covshift_dml::{Dataset, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = 2;
    let draw = |rng: &mut ChaCha8Rng, n: usize, s: f64| {
        Dataset::new(n, k, (0..n * k).map(|_| s + rng.sample::<f64, _>(StandardNormal)).collect())
    };
    let x = draw(&mut rng, 2000, 0.0)?;
    let y: Vec<f64> = x
        .rows()
        .map(|r| (r[0] - r[1]).sin() + 0.5 * r[0] * r[0] + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z = draw(&mut rng, 2000, 0.4)?;
    // A crude regression: linear part only.
    let gamma = FnLearner::new(k, |u: &[f64]| 0.5 + 0.8 * (u[0] - u[1]));
    let dict = DictionarySpec::quadratic(k)?;
    let opts = DebiasOptions::default();

    let pinv = pseudo_inverse_estimate(&MeanOutcome, &dict, &x, &y, &z, &gamma, &opts)?;
    let riesz = estimate_with_fitted(&MeanOutcome, &dict, &x, &y, &z, &gamma, PenaltyRule::Fixed(1e-8), &opts)?;
    println!("plug-in                {:.6}", pinv.plug_in);
    println!("pseudo-inverse         {:.10}", pinv.theta_hat);
    println!("representer, r = 1e-8  {:.10}", riesz.theta_hat);
    println!("relative gap in correction: {:.2e}", ((pinv.correction - riesz.correction) / riesz.correction).abs());
    Ok(())
}
