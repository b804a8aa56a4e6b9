//! Lasso estimator without cross-fitting, computed from training summaries only.
//!
//! The training side contributes `Q̂` and `(1/T) Σ b(X_t)(Y_t − γ̂(X_t))`; raw
//! training rows are not needed once those are shared.

use covshift_dml::debias::{estimate_from_summaries, nocrossfit_estimate, training_summaries, DebiasOptions};
use covshift_dml::featmap::DictionarySpec;
use covshift_dml::learners::{fit_lasso_learner, predict_batch};
use covshift_dml::riesz::MeanOutcome;
use covshift_dml::solvers::{default_penalty, PenaltyRule};
use covshift_dml::{Dataset, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 2;
    let draw = |rng: &mut ChaCha8Rng, n: usize, s: f64| {
        Dataset::new(n, k, (0..n * k).map(|_| s + rng.sample::<f64, _>(StandardNormal)).collect())
    };
    let x = draw(&mut rng, 3000, 0.0)?;
    let y: Vec<f64> = x
        .rows()
        .map(|r| 1.0 + r[0] - 0.5 * r[0] * r[1] + 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z = draw(&mut rng, 3000, 0.3)?;
    let dict = DictionarySpec::quadratic(k)?;
    let r = default_penalty(1.0, dict.output_dim(), x.nrows());
    let opts = DebiasOptions::default();

    let raw = nocrossfit_estimate(&MeanOutcome, &dict, &x, &y, &z, PenaltyRule::Fixed(r), PenaltyRule::Fixed(r), &opts)?;

    // Training site: fit and summarize.
    let gamma = fit_lasso_learner(&dict, &x, &y, r)?;
    let summaries = training_summaries(&dict, &x, &y, &predict_batch(&gamma, &x)?)?;
    // Field site: only the summaries and the fitted model travel.
    let shared = estimate_from_summaries(&MeanOutcome, &dict, &z, &gamma, &summaries, PenaltyRule::Fixed(r), &opts)?;

    println!("raw training data : theta = {:.12}", raw.theta_hat);
    println!("summaries only    : theta = {:.12}", shared.theta_hat);
    println!("plug-in {:.4}, correction {:+.4}, se {:.4}", raw.plug_in, raw.correction, raw.std_error);
    Ok(())
}
