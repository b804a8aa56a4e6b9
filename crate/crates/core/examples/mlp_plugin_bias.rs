//! Early-stopped network: plug-in bias shrinks with training, the correction removes most of it.

use covshift_dml::debias::{plug_in_estimate, sample_split_estimate, DebiasOptions};
use covshift_dml::featmap::DictionarySpec;
use covshift_dml::learners::{MlpConfig, MlpLearner};
use covshift_dml::riesz::MeanOutcome;
use covshift_dml::simgen::{draw_sample, random_spec, spec_truth, SampleSizes, SimKnobs};
use covshift_dml::solvers::PenaltyRule;
use covshift_dml::Result;

fn main() -> Result<()> {
    let knobs = SimKnobs::default();
    let spec = random_spec(4, &knobs)?;
    let truth = spec_truth(&spec, 1_000_000, 4, 0)?;
    let sizes = SampleSizes {
        n_train: 4000,
        n_validate: 4000,
        n_field: 4000,
    };
    let sample = draw_sample(&spec, sizes, 4, 0, 0, truth)?;
    let dict = DictionarySpec::quadratic(knobs.dim)?;
    let opts = DebiasOptions::default();
    let cfg = MlpConfig {
        seed: 1,
        ..MlpConfig::default()
    };
    let mut net = MlpLearner::new(&cfg, knobs.dim)?;
    println!("truth {:.4} (mc se {:.1e}); network has {} parameters", truth.value, truth.mc_se, net.network().num_params());
    println!("{:>6} {:>10} {:>10} {:>10}", "epoch", "loss", "plug-in", "debiased");
    let mut done = 0;
    for epoch in [10, 25, 50, 100, 200] {
        net.train(&sample.x_train, &sample.y_train, epoch - done)?;
        done = epoch;
        let plug = plug_in_estimate(&MeanOutcome, &sample.z_field, &net, 0.95)?;
        let deb = sample_split_estimate(
            &MeanOutcome,
            &dict,
            &sample.x_train,
            &sample.z_field,
            &sample.v_validate,
            &sample.y_validate,
            &net,
            PenaltyRule::default(),
            &opts,
        )?;
        println!(
            "{epoch:>6} {:>10.5} {:>+10.4} {:>+10.4}",
            net.last_loss(),
            plug.theta_hat - truth.value,
            deb.theta_hat - truth.value
        );
    }
    Ok(())
}
