//! Replication study: specifications × samples × training epochs × estimators.
//!
//! `run_experiment` writes one [`ReplicationRecord`] per estimate to
//! `records.csv` in the output directory. A rerun with the same configuration
//! skips every (spec, rep) job whose records are already complete, so an
//! interrupted study can be resumed. [`aggregate`] reduces records to the
//! RMS-bias / average-RMSE / coverage table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_float, Dataset};
use crate::debias::{
    crossfit_with_learners, estimate_with_fitted, plug_in_estimate, prepare_crossfit, pseudo_inverse_estimate,
    sample_split_estimate, DebiasOptions, DebiasResult, FoldPlan, TrimSpec, VarianceMode,
};
use crate::error::{Error, Result};
use crate::featmap::DictionarySpec;
use crate::learners::{fit_lasso_learner_with, MlpConfig, MlpLearner, RegressionLearner};
use crate::riesz::MeanOutcome;
use crate::simgen::{draw_sample, random_spec, spec_truth, stream_seed, SampleSizes, SimKnobs, SimSample, SimSpec, StreamRole};
use crate::solvers::{PenaltyRule, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PlugIn,
    CrossFit,
    NoCrossFit,
    PseudoInverse,
    SampleSplit,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::PlugIn,
        EstimatorKind::CrossFit,
        EstimatorKind::NoCrossFit,
        EstimatorKind::PseudoInverse,
        EstimatorKind::SampleSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::PlugIn => "plug_in",
            EstimatorKind::CrossFit => "cross_fit",
            EstimatorKind::NoCrossFit => "no_cross_fit",
            EstimatorKind::PseudoInverse => "pseudo_inverse",
            EstimatorKind::SampleSplit => "sample_split",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerChoice {
    /// Lasso on the polynomial dictionary.
    Lasso { penalty: PenaltyRule },
    Mlp(MlpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub num_specs: usize,
    pub reps_per_spec: usize,
    pub n_train: usize,
    pub n_validate: usize,
    pub n_field: usize,
    /// Training epochs at which estimates are recorded (network learner only).
    pub epoch_grid: Vec<usize>,
    pub estimators: Vec<EstimatorKind>,
    pub learner: LearnerChoice,
    pub dictionary_order: usize,
    pub riesz_penalty: PenaltyRule,
    pub trim: TrimSpec,
    pub variance: VarianceMode,
    pub level: f64,
    pub num_folds: usize,
    pub knobs: SimKnobs,
    pub n_oracle: usize,
    pub bootstrap_resamples: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// Stop after this many newly computed jobs (for staged runs).
    pub job_limit: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_specs: 30,
            reps_per_spec: 60,
            n_train: 10_000,
            n_validate: 10_000,
            n_field: 10_000,
            epoch_grid: vec![25, 50, 100, 250, 500],
            estimators: vec![EstimatorKind::PlugIn, EstimatorKind::SampleSplit],
            learner: LearnerChoice::Mlp(MlpConfig::default()),
            dictionary_order: 2,
            riesz_penalty: PenaltyRule::default(),
            trim: TrimSpec::default(),
            variance: VarianceMode::Corrected,
            level: 0.95,
            num_folds: 5,
            knobs: SimKnobs::default(),
            n_oracle: 1_000_000,
            bootstrap_resamples: 1000,
            master_seed: 0,
            out_dir: PathBuf::from("results"),
            job_limit: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_specs == 0 || self.reps_per_spec == 0 || self.n_train == 0 || self.n_field == 0 {
            return Err(Error::Config("spec, rep and sample counts must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if self.estimators.contains(&EstimatorKind::SampleSplit) && self.n_validate == 0 {
            return Err(Error::Config("sample_split needs n_validate > 0".into()));
        }
        if self.dictionary_order == 0 || self.bootstrap_resamples == 0 {
            return Err(Error::Config("dictionary_order and bootstrap_resamples must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("level must lie in (0, 1)".into()));
        }
        self.knobs.validate()?;
        if let LearnerChoice::Mlp(cfg) = &self.learner {
            cfg.validate()?;
            if self.epoch_grid.is_empty() || self.epoch_grid.contains(&0) {
                return Err(Error::Config("epoch_grid must be nonempty and positive".into()));
            }
            if self.epoch_grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("epoch_grid must be strictly increasing".into()));
            }
            if *self.epoch_grid.last().unwrap() > cfg.max_epochs {
                return Err(Error::Config("epoch_grid exceeds the network's max_epochs".into()));
            }
        }
        if self.estimators.contains(&EstimatorKind::CrossFit) && (self.num_folds < 2 || self.num_folds > self.n_train) {
            return Err(Error::Config("cross_fit needs 2 <= num_folds <= n_train".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Epochs at which records are emitted: the grid for a network, `[0]` for Lasso.
    pub fn record_epochs(&self) -> Vec<usize> {
        match self.learner {
            LearnerChoice::Mlp(_) => self.epoch_grid.clone(),
            LearnerChoice::Lasso { .. } => vec![0],
        }
    }

    fn dictionary(&self) -> Result<DictionarySpec> {
        DictionarySpec::new(self.knobs.dim, self.dictionary_order, true)
    }

    fn debias_options(&self) -> DebiasOptions {
        DebiasOptions {
            level: self.level,
            variance: self.variance,
            trim: self.trim,
            solver: SolverOptions::default(),
        }
    }

    fn sizes(&self) -> SampleSizes {
        let needs_v = self.estimators.contains(&EstimatorKind::SampleSplit);
        SampleSizes {
            n_train: self.n_train,
            n_validate: if needs_v { self.n_validate } else { 0 },
            n_field: self.n_field,
        }
    }
}

/// One estimate from one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub spec_id: u64,
    pub rep_id: u64,
    pub epoch: usize,
    pub estimator: String,
    pub theta_hat: f64,
    pub plug_in: f64,
    pub correction: f64,
    pub v_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub truth_theta: f64,
    pub truth_mc_se: f64,
    pub failed: bool,
    pub wall_time_ms: f64,
}

pub const RECORD_COLUMNS: [&str; 14] = [
    "spec_id",
    "rep_id",
    "epoch",
    "estimator",
    "theta_hat",
    "plug_in",
    "correction",
    "v_hat",
    "ci_low",
    "ci_high",
    "truth_theta",
    "truth_mc_se",
    "failed",
    "wall_time_ms",
];

impl ReplicationRecord {
    fn from_result(key: (u64, u64, usize, EstimatorKind), r: &DebiasResult, truth: (f64, f64), ms: f64) -> Self {
        Self {
            spec_id: key.0,
            rep_id: key.1,
            epoch: key.2,
            estimator: key.3.name().to_string(),
            theta_hat: r.theta_hat,
            plug_in: r.plug_in,
            correction: r.correction,
            v_hat: r.v_hat,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            truth_theta: truth.0,
            truth_mc_se: truth.1,
            failed: false,
            wall_time_ms: ms,
        }
    }

    fn failure(key: (u64, u64, usize, EstimatorKind), truth: (f64, f64)) -> Self {
        Self {
            spec_id: key.0,
            rep_id: key.1,
            epoch: key.2,
            estimator: key.3.name().to_string(),
            theta_hat: f64::NAN,
            plug_in: f64::NAN,
            correction: f64::NAN,
            v_hat: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            truth_theta: truth.0,
            truth_mc_se: truth.1,
            failed: true,
            wall_time_ms: 0.0,
        }
    }

    fn fields(&self) -> [String; 14] {
        [
            self.spec_id.to_string(),
            self.rep_id.to_string(),
            self.epoch.to_string(),
            self.estimator.clone(),
            format_float(self.theta_hat),
            format_float(self.plug_in),
            format_float(self.correction),
            format_float(self.v_hat),
            format_float(self.ci_low),
            format_float(self.ci_high),
            format_float(self.truth_theta),
            format_float(self.truth_mc_se),
            self.failed.to_string(),
            format!("{:.3}", self.wall_time_ms),
        ]
    }

    fn sort_key(&self) -> (u64, u64, usize, EstimatorKind) {
        let kind = EstimatorKind::from_name(&self.estimator).unwrap_or(EstimatorKind::PlugIn);
        (self.spec_id, self.rep_id, self.epoch, kind)
    }
}

pub fn write_records(path: &Path, records: &[ReplicationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(RECORD_COLUMNS).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record(r.fields()).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(RECORD_COLUMNS) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unexpected header {:?}", headers),
        });
    }
    rdr.deserialize()
        .collect::<std::result::Result<Vec<ReplicationRecord>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct Job<'a> {
    spec_id: u64,
    rep_id: u64,
    spec: &'a SimSpec,
    truth: (f64, f64),
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    dict: DictionarySpec,
    opts: DebiasOptions,
    epochs: Vec<usize>,
}

/// Specifications for ids `0..num_specs`, each with its own seed stream.
pub fn study_specs(cfg: &ExperimentConfig) -> Result<Vec<SimSpec>> {
    (0..cfg.num_specs as u64)
        .into_par_iter()
        .map(|s| random_spec(stream_seed(cfg.master_seed, s, 0, StreamRole::Spec), &cfg.knobs))
        .collect()
}

/// Runs (or resumes) the study; returns all records sorted by key.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicationRecord>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let config_path = cfg.out_dir.join("config.json");
    let cfg_json = serde_json::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&config_path, cfg_json).map_err(|e| Error::io(&config_path, e))?;

    let ctx = Context {
        cfg,
        dict: cfg.dictionary()?,
        opts: cfg.debias_options(),
        epochs: cfg.record_epochs(),
    };
    let per_job = ctx.epochs.len() * cfg.estimators.len();
    let records_path = cfg.out_dir.join("records.csv");

    let mut existing = if records_path.exists() {
        read_records(&records_path)?
    } else {
        Vec::new()
    };
    let mut counts: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for r in &existing {
        *counts.entry((r.spec_id, r.rep_id)).or_default() += 1;
    }
    let done: BTreeSet<(u64, u64)> = counts.into_iter().filter(|&(_, c)| c == per_job).map(|(k, _)| k).collect();
    existing.retain(|r| done.contains(&(r.spec_id, r.rep_id)));

    let specs = study_specs(cfg)?;
    let spec_dir = cfg.out_dir.join("specs");
    fs::create_dir_all(&spec_dir).map_err(|e| Error::io(&spec_dir, e))?;
    for (s, spec) in specs.iter().enumerate() {
        let p = spec_dir.join(format!("spec_{s:04}.json"));
        fs::write(&p, spec.to_json()?).map_err(|e| Error::io(&p, e))?;
    }

    let mut pending: Vec<(u64, u64)> = (0..cfg.num_specs as u64)
        .flat_map(|s| (0..cfg.reps_per_spec as u64).map(move |r| (s, r)))
        .filter(|k| !done.contains(k))
        .collect();
    if let Some(limit) = cfg.job_limit {
        pending.truncate(limit);
    }
    let needed: BTreeSet<u64> = pending.iter().map(|&(s, _)| s).collect();
    let truths: BTreeMap<u64, (f64, f64)> = needed
        .into_par_iter()
        .map(|s| {
            let t = spec_truth(&specs[s as usize], cfg.n_oracle, cfg.master_seed, s)?;
            Ok((s, (t.value, t.mc_se)))
        })
        .collect::<Result<_>>()?;

    // Rewrite the kept records so the file holds only complete jobs, then append.
    write_records(&records_path, &existing)?;
    let (tx, rx) = mpsc::channel::<Vec<ReplicationRecord>>();
    let writer_path = records_path.clone();
    let writer = std::thread::spawn(move || -> Result<()> {
        let file = OpenOptions::new()
            .append(true)
            .open(&writer_path)
            .map_err(|e| Error::io(&writer_path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        for batch in rx {
            for r in &batch {
                w.write_record(r.fields()).map_err(|e| csv_error(&writer_path, e))?;
            }
            w.flush().map_err(|e| Error::io(&writer_path, e))?;
        }
        Ok(())
    });

    let results: Vec<Result<Vec<ReplicationRecord>>> = pending
        .par_iter()
        .map_with(tx, |tx, &(s, r)| {
            let job = Job {
                spec_id: s,
                rep_id: r,
                spec: &specs[s as usize],
                truth: truths[&s],
            };
            let recs = run_job(&ctx, &job)?;
            tx.send(recs.clone()).map_err(|_| Error::Config("record writer stopped".into()))?;
            Ok(recs)
        })
        .collect();
    writer.join().map_err(|_| Error::Config("record writer panicked".into()))??;

    let mut all = existing;
    for r in results {
        all.extend(r?);
    }
    all.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    write_records(&records_path, &all)?;
    Ok(all)
}

fn run_job(ctx: &Context<'_>, job: &Job<'_>) -> Result<Vec<ReplicationRecord>> {
    let cfg = ctx.cfg;
    let sample = draw_sample(
        job.spec,
        cfg.sizes(),
        cfg.master_seed,
        job.spec_id,
        job.rep_id,
        crate::simgen::OracleTruth {
            value: job.truth.0,
            mc_se: job.truth.1,
        },
    )?;
    let learner_seed = stream_seed(cfg.master_seed, job.spec_id, job.rep_id, StreamRole::Learner);
    let fold_seed = stream_seed(cfg.master_seed, job.spec_id, job.rep_id, StreamRole::Folds);
    let wants_crossfit = cfg.estimators.contains(&EstimatorKind::CrossFit);
    let plan = if wants_crossfit {
        Some(FoldPlan::new(cfg.n_train, cfg.num_folds, fold_seed)?)
    } else {
        None
    };
    let prep = match &plan {
        Some(p) => Some(prepare_crossfit(
            &MeanOutcome,
            &ctx.dict,
            &sample.x_train,
            &sample.z_field,
            p,
            cfg.riesz_penalty,
            &ctx.opts,
        )?),
        None => None,
    };

    let mut out = Vec::new();
    match &cfg.learner {
        LearnerChoice::Lasso { penalty } => {
            let fit = |x: &Dataset, y: &[f64]| -> Result<Box<dyn RegressionLearner>> {
                let r = penalty.resolve(ctx.dict.output_dim(), x.nrows());
                Ok(Box::new(fit_lasso_learner_with(&ctx.dict, x, y, r, &ctx.opts.solver)?))
            };
            let full = fit(&sample.x_train, &sample.y_train)?;
            let folds = match &plan {
                Some(p) => (0..p.num_folds())
                    .map(|l| {
                        let comp = p.complement(l);
                        let y: Vec<f64> = comp.iter().map(|&i| sample.y_train[i]).collect();
                        fit(&sample.x_train.select(&comp), &y)
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            let refs: Vec<&dyn RegressionLearner> = folds.iter().map(|b| b.as_ref()).collect();
            emit_epoch(ctx, job, &sample, 0, full.as_ref(), prep.as_ref(), &refs, &mut out);
        }
        LearnerChoice::Mlp(base) => {
            let mlp_cfg = MlpConfig {
                seed: learner_seed,
                ..base.clone()
            };
            let mut full = MlpLearner::new(&mlp_cfg, cfg.knobs.dim)?;
            let mut folds: Vec<(MlpLearner, Dataset, Vec<f64>)> = Vec::new();
            if let Some(p) = &plan {
                for l in 0..p.num_folds() {
                    let comp = p.complement(l);
                    if comp.len() < mlp_cfg.batch_size {
                        return Err(Error::FoldTooSmall {
                            fold: l,
                            size: comp.len(),
                            required: mlp_cfg.batch_size,
                        });
                    }
                    let fold_cfg = MlpConfig {
                        seed: stream_seed(learner_seed, l as u64 + 1, 0, StreamRole::Learner),
                        ..mlp_cfg.clone()
                    };
                    let y: Vec<f64> = comp.iter().map(|&i| sample.y_train[i]).collect();
                    folds.push((MlpLearner::new(&fold_cfg, cfg.knobs.dim)?, sample.x_train.select(&comp), y));
                }
            }
            let mut trained = 0;
            let mut diverged = false;
            for &epoch in &ctx.epochs {
                if !diverged {
                    let step = epoch - trained;
                    let mut ok = full.train(&sample.x_train, &sample.y_train, step).is_ok();
                    for (m, x, y) in folds.iter_mut() {
                        ok &= m.train(x, y, step).is_ok();
                    }
                    trained = epoch;
                    diverged = !ok;
                }
                if diverged {
                    for &kind in &cfg.estimators {
                        out.push(ReplicationRecord::failure((job.spec_id, job.rep_id, epoch, kind), job.truth));
                    }
                    continue;
                }
                let refs: Vec<&dyn RegressionLearner> = folds.iter().map(|(m, _, _)| m as &dyn RegressionLearner).collect();
                emit_epoch(ctx, job, &sample, epoch, &full, prep.as_ref(), &refs, &mut out);
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn emit_epoch(
    ctx: &Context<'_>,
    job: &Job<'_>,
    sample: &SimSample,
    epoch: usize,
    gamma: &dyn RegressionLearner,
    prep: Option<&crate::debias::CrossfitPrep>,
    fold_learners: &[&dyn RegressionLearner],
    out: &mut Vec<ReplicationRecord>,
) {
    let cfg = ctx.cfg;
    let func = MeanOutcome;
    for &kind in &cfg.estimators {
        let start = Instant::now();
        let res = match kind {
            EstimatorKind::PlugIn => plug_in_estimate(&func, &sample.z_field, gamma, cfg.level),
            EstimatorKind::CrossFit => crossfit_with_learners(
                prep.expect("prepared when cross_fit is selected"),
                &func,
                &sample.x_train,
                &sample.y_train,
                &sample.z_field,
                fold_learners,
                &ctx.opts,
            ),
            EstimatorKind::NoCrossFit => estimate_with_fitted(
                &func,
                &ctx.dict,
                &sample.x_train,
                &sample.y_train,
                &sample.z_field,
                gamma,
                cfg.riesz_penalty,
                &ctx.opts,
            ),
            EstimatorKind::PseudoInverse => pseudo_inverse_estimate(
                &func,
                &ctx.dict,
                &sample.x_train,
                &sample.y_train,
                &sample.z_field,
                gamma,
                &ctx.opts,
            ),
            EstimatorKind::SampleSplit => sample_split_estimate(
                &func,
                &ctx.dict,
                &sample.x_train,
                &sample.z_field,
                &sample.v_validate,
                &sample.y_validate,
                gamma,
                cfg.riesz_penalty,
                &ctx.opts,
            ),
        };
        let key = (job.spec_id, job.rep_id, epoch, kind);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        out.push(match res {
            Ok(r) if r.theta_hat.is_finite() => ReplicationRecord::from_result(key, &r, job.truth, ms),
            _ => ReplicationRecord::failure(key, job.truth),
        });
    }
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub estimator: String,
    pub epoch: usize,
    pub rms_bias: f64,
    pub avg_rmse: f64,
    /// Bootstrap standard error of `rms_bias`, resampling specifications.
    pub rms_bias_se: f64,
    pub coverage_rate: f64,
    pub n_records: usize,
}

pub const AGGREGATE_COLUMNS: [&str; 7] = [
    "estimator",
    "epoch",
    "rms_bias",
    "avg_rmse",
    "rms_bias_se",
    "coverage_rate",
    "n_records",
];

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|b| b * b).sum::<f64>() / values.len() as f64).sqrt()
}

/// Per (estimator, epoch): RMS over specs of the mean bias, mean over specs of
/// the RMSE, CI coverage and a bootstrap SE of the RMS bias. Failed records
/// are excluded.
pub fn aggregate(records: &[ReplicationRecord], resamples: usize, seed: u64) -> Result<Vec<AggregateRow>> {
    let mut groups: BTreeMap<(EstimatorKind, usize), Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((EstimatorKind::from_name(&r.estimator)?, r.epoch))
            .or_default()
            .push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((kind, epoch), mut recs) in groups {
        recs.retain(|r| !r.failed && r.theta_hat.is_finite());
        if recs.is_empty() {
            return Err(Error::EmptyGroup {
                estimator: kind.name().to_string(),
                epoch,
            });
        }
        recs.sort_by_key(|r| (r.spec_id, r.rep_id));
        let mut by_spec: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut covered = 0usize;
        for r in &recs {
            by_spec.entry(r.spec_id).or_default().push(r.theta_hat - r.truth_theta);
            if r.ci_low <= r.truth_theta && r.truth_theta <= r.ci_high {
                covered += 1;
            }
        }
        let biases: Vec<f64> = by_spec.values().map(|e| e.iter().sum::<f64>() / e.len() as f64).collect();
        let rmses: Vec<f64> = by_spec.values().map(|e| rms(e)).collect();
        let rms_bias = rms(&biases);
        let avg_rmse = rmses.iter().sum::<f64>() / rmses.len() as f64;
        let rms_bias_se = bootstrap_rms_se(&biases, resamples, seed);
        rows.push(AggregateRow {
            estimator: kind.name().to_string(),
            epoch,
            rms_bias,
            avg_rmse,
            rms_bias_se,
            coverage_rate: covered as f64 / recs.len() as f64,
            n_records: recs.len(),
        });
    }
    Ok(rows)
}

/// Standard deviation of the RMS over `resamples` bootstrap draws of `values`.
pub fn bootstrap_rms_se(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut draws = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; n];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = values[rng.random_range(0..n)];
        }
        draws.push(rms(&buf));
    }
    let m = draws.iter().sum::<f64>() / resamples as f64;
    (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

fn aggregate_fields(r: &AggregateRow) -> [String; 7] {
    [
        r.estimator.clone(),
        r.epoch.to_string(),
        format_float(r.rms_bias),
        format_float(r.avg_rmse),
        format_float(r.rms_bias_se),
        format_float(r.coverage_rate),
        r.n_records.to_string(),
    ]
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(AGGREGATE_COLUMNS).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(aggregate_fields(r)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn json_num(x: f64) -> String {
    if x.is_finite() {
        format_float(x)
    } else {
        "null".into()
    }
}

/// JSON array of aggregate rows with snake_case keys and 17-digit numbers.
pub fn aggregate_json(rows: &[AggregateRow]) -> String {
    let items: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "  {{\"estimator\":\"{}\",\"epoch\":{},\"rms_bias\":{},\"avg_rmse\":{},\"rms_bias_se\":{},\"coverage_rate\":{},\"n_records\":{}}}",
                r.estimator,
                r.epoch,
                json_num(r.rms_bias),
                json_num(r.avg_rmse),
                json_num(r.rms_bias_se),
                json_num(r.coverage_rate),
                r.n_records
            )
        })
        .collect();
    if items.is_empty() {
        "[]\n".into()
    } else {
        format!("[\n{}\n]\n", items.join(",\n"))
    }
}

/// Paths written by [`emit_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub records_csv: PathBuf,
    pub aggregate_csv: PathBuf,
    pub aggregate_json: PathBuf,
    pub plot_data_csv: PathBuf,
}

/// Writes records, aggregates (CSV and JSON) and long-format plot data to `dir`.
pub fn emit_outputs(dir: &Path, rows: &[AggregateRow], records: &[ReplicationRecord]) -> Result<OutputFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = OutputFiles {
        records_csv: dir.join("records.csv"),
        aggregate_csv: dir.join("aggregate.csv"),
        aggregate_json: dir.join("aggregate.json"),
        plot_data_csv: dir.join("plot_data.csv"),
    };
    write_records(&files.records_csv, records)?;
    write_aggregate_csv(&files.aggregate_csv, rows)?;
    fs::write(&files.aggregate_json, aggregate_json(rows)).map_err(|e| Error::io(&files.aggregate_json, e))?;

    let path = &files.plot_data_csv;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["epoch", "estimator", "rms_bias", "rms_bias_se", "avg_rmse"])
        .map_err(|e| csv_error(path, e))?;
    let mut sorted: Vec<&AggregateRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (a.epoch, &a.estimator).cmp(&(b.epoch, &b.estimator)));
    for r in sorted {
        w.write_record([
            r.epoch.to_string(),
            r.estimator.clone(),
            format_float(r.rms_bias),
            format_float(r.rms_bias_se),
            format_float(r.avg_rmse),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(files)
}

/// Plain-text table of aggregate rows.
pub fn render_report(rows: &[AggregateRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>12} {:>12} {:>12} {:>9} {:>8}",
        "estimator", "epoch", "rms_bias", "(boot se)", "avg_rmse", "coverage", "records"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>9.3} {:>8}",
            r.estimator, r.epoch, r.rms_bias, r.rms_bias_se, r.avg_rmse, r.coverage_rate, r.n_records
        );
    }
    s
}
