//! Average potential outcome `E[γ₀(d, Z)]` at a fixed treatment level in a shifted population.

use covshift_dml::debias::{crossfit_estimate, DebiasOptions, FoldPlan};
use covshift_dml::featmap::DictionarySpec;
use covshift_dml::learners::LassoFactory;
use covshift_dml::riesz::{PotentialOutcome, TreatmentPlacement};
use covshift_dml::solvers::{PenaltyRule, SolverOptions};
use covshift_dml::{Dataset, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = 4000;
    // Training rows are (d, w): treatment then one covariate; treatment depends on w.
    let mut rows = Vec::with_capacity(2 * t);
    let mut y = Vec::with_capacity(t);
    for _ in 0..t {
        let w: f64 = rng.sample(StandardNormal);
        let d = 0.5 * w + rng.sample::<f64, _>(StandardNormal);
        rows.extend_from_slice(&[d, w]);
        y.push(1.0 + 2.0 * d + w + 0.5 * d * w + 0.5 * rng.sample::<f64, _>(StandardNormal));
    }
    let x = Dataset::new(t, 2, rows)?;
    // Field rows carry covariates only, drawn from a shifted population.
    let field = Dataset::new(3000, 1, (0..3000).map(|_| 0.7 + rng.sample::<f64, _>(StandardNormal)).collect())?;

    let d0 = 1.0;
    let func = PotentialOutcome::new(TreatmentPlacement::Insert(0), d0);
    let truth = 1.0 + 2.0 * d0 + 0.7 + 0.5 * d0 * 0.7;
    let dict = DictionarySpec::quadratic(2)?;
    let factory = LassoFactory {
        dict: dict.clone(),
        penalty: PenaltyRule::Rate { c: 2.0 },
        opts: SolverOptions::default(),
    };
    let plan = FoldPlan::new(t, 5, 3)?;
    let res = crossfit_estimate(&func, &dict, &x, &y, &field, &plan, &factory, PenaltyRule::default(), &DebiasOptions::default())?;
    println!("E[gamma({d0}, Z)]: truth {truth:.4}");
    println!("  plug-in  {:.4}", res.plug_in);
    println!("  debiased {:.4}  95% CI [{:.4}, {:.4}]", res.theta_hat, res.ci_low, res.ci_high);
    Ok(())
}
