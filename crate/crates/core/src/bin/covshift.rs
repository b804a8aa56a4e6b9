use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covshift_dml::harness::{
    aggregate, emit_outputs, read_aggregate_csv, read_records, render_report, run_experiment, EstimatorKind,
    ExperimentConfig, LearnerChoice,
};
use covshift_dml::learners::MlpConfig;
use covshift_dml::solvers::PenaltyRule;
use covshift_dml::{Error, Result};

#[derive(Parser)]
#[command(name = "covshift", version, about = "Debiased estimation under covariate shift: simulation study runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or resume a replication study, then aggregate it.
    Run(RunArgs),
    /// Recompute aggregate tables from an existing records.csv.
    Aggregate(AggregateArgs),
    /// Print the aggregate table of a finished study.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    num_specs: Option<usize>,
    #[arg(long)]
    reps_per_spec: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_validate: Option<usize>,
    #[arg(long)]
    n_field: Option<usize>,
    /// Comma-separated epoch grid, e.g. 25,50,100.
    #[arg(long, value_delimiter = ',')]
    epoch_grid: Option<Vec<usize>>,
    /// Comma-separated estimator names: plug_in, cross_fit, no_cross_fit, pseudo_inverse, sample_split.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Regression learner: `mlp` or `lasso`.
    #[arg(long)]
    learner: Option<String>,
    /// Lasso penalty constant c in c·sqrt(ln J / n).
    #[arg(long, default_value_t = 0.5)]
    lasso_c: f64,
    /// Riesz penalty constant c in c·sqrt(ln J / n).
    #[arg(long)]
    riesz_c: Option<f64>,
    #[arg(long)]
    num_folds: Option<usize>,
    #[arg(long)]
    n_oracle: Option<usize>,
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
    /// Stop after this many new (spec, rep) jobs.
    #[arg(long)]
    job_limit: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    bootstrap_resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field.clone() { cfg.$field = v; })* };
    }
    set!(num_specs, reps_per_spec, n_train, n_validate, n_field, epoch_grid, num_folds, n_oracle, bootstrap_resamples);
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if a.job_limit.is_some() {
        cfg.job_limit = a.job_limit;
    }
    if let Some(names) = &a.estimators {
        cfg.estimators = names.iter().map(|n| EstimatorKind::from_name(n.trim())).collect::<Result<_>>()?;
    }
    if let Some(c) = a.riesz_c {
        cfg.riesz_penalty = PenaltyRule::Rate { c };
    }
    match a.learner.as_deref() {
        None => {}
        Some("lasso") => cfg.learner = LearnerChoice::Lasso { penalty: PenaltyRule::Rate { c: a.lasso_c } },
        Some("mlp") => {
            if !matches!(cfg.learner, LearnerChoice::Mlp(_)) {
                cfg.learner = LearnerChoice::Mlp(MlpConfig::default());
            }
        }
        Some(other) => return Err(Error::Config(format!("unknown learner '{other}'"))),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = build_config(&a)?;
    if let Some(t) = a.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let records = run_experiment(&cfg)?;
    let expected = cfg.num_specs * cfg.reps_per_spec * cfg.record_epochs().len() * cfg.estimators.len();
    eprintln!("{} of {} records complete in {}", records.len(), expected, cfg.out_dir.display());
    if records.is_empty() {
        return Ok(());
    }
    let rows = aggregate(&records, cfg.bootstrap_resamples, cfg.master_seed)?;
    emit_outputs(&cfg.out_dir, &rows, &records)?;
    print!("{}", render_report(&rows));
    Ok(())
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let records = read_records(&a.out.join("records.csv"))?;
    let rows = aggregate(&records, a.bootstrap_resamples, a.seed)?;
    emit_outputs(&a.out, &rows, &records)?;
    print!("{}", render_report(&rows));
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let rows = read_aggregate_csv(&a.out.join("aggregate.csv"))?;
    print!("{}", render_report(&rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Report(a) => report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
