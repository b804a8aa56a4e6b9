//! Cross-fit debiased mean outcome with a deliberately over-penalized Lasso.

use covshift_dml::debias::{crossfit_estimate, DebiasOptions, FoldPlan};
use covshift_dml::featmap::DictionarySpec;
use covshift_dml::learners::LassoFactory;
use covshift_dml::riesz::MeanOutcome;
use covshift_dml::solvers::{PenaltyRule, SolverOptions};
use covshift_dml::{Dataset, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (k, n, t, shift) = (3, 4000, 4000, 0.5);
    let beta = [1.0, -0.5, 0.25];
    let g = |x: &[f64]| 0.3 + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
    let draw = |rng: &mut ChaCha8Rng, n: usize, s: f64| {
        Dataset::new(n, k, (0..n * k).map(|_| s + rng.sample::<f64, _>(StandardNormal)).collect())
    };
    let x = draw(&mut rng, t, 0.0)?;
    let y: Vec<f64> = x.rows().map(|r| g(r) + rng.sample::<f64, _>(StandardNormal)).collect();
    let z = draw(&mut rng, n, shift)?;
    let truth = 0.3 + shift * beta.iter().sum::<f64>();

    let dict = DictionarySpec::new(k, 1, true)?;
    let plan = FoldPlan::new(t, 5, 1)?;
    let opts = DebiasOptions::default();
    for c in [0.5, 5.0] {
        let factory = LassoFactory {
            dict: dict.clone(),
            penalty: PenaltyRule::Rate { c },
            opts: SolverOptions::default(),
        };
        let res = crossfit_estimate(&MeanOutcome, &dict, &x, &y, &z, &plan, &factory, PenaltyRule::default(), &opts)?;
        println!("lasso c = {c}");
        println!("  plug-in        {:.4}   (truth {truth:.4})", res.plug_in);
        println!("  correction     {:+.4}", res.correction);
        println!("  debiased       {:.4}   se {:.4}   95% CI [{:.4}, {:.4}]", res.theta_hat, res.std_error, res.ci_low, res.ci_high);
    }
    Ok(())
}
