//! A small replication study with the Lasso learner, written to a temporary directory.
//!
//! The `covshift` binary runs the same harness from the command line.

use covshift_dml::harness::{aggregate, emit_outputs, render_report, run_experiment, EstimatorKind, ExperimentConfig, LearnerChoice};
use covshift_dml::simgen::SimKnobs;
use covshift_dml::solvers::PenaltyRule;
use covshift_dml::Result;

fn main() -> Result<()> {
    let out_dir = std::env::temp_dir().join("covshift_example_study");
    let cfg = ExperimentConfig {
        num_specs: 4,
        reps_per_spec: 5,
        n_train: 1000,
        n_validate: 1000,
        n_field: 1000,
        estimators: vec![
            EstimatorKind::PlugIn,
            EstimatorKind::CrossFit,
            EstimatorKind::NoCrossFit,
            EstimatorKind::PseudoInverse,
            EstimatorKind::SampleSplit,
        ],
        learner: LearnerChoice::Lasso { penalty: PenaltyRule::Rate { c: 2.0 } },
        knobs: SimKnobs {
            pilot_size: 20_000,
            ..SimKnobs::default()
        },
        n_oracle: 200_000,
        bootstrap_resamples: 200,
        out_dir: out_dir.clone(),
        ..ExperimentConfig::default()
    };
    let records = run_experiment(&cfg)?;
    let rows = aggregate(&records, cfg.bootstrap_resamples, cfg.master_seed)?;
    let files = emit_outputs(&out_dir, &rows, &records)?;
    print!("{}", render_report(&rows));
    println!("records: {}", files.records_csv.display());
    println!("plot data: {}", files.plot_data_csv.display());
    Ok(())
}
