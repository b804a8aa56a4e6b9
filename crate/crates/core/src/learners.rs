//! Regression learners for `γ̂(x) ≈ E[Y | X = x]`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use crate::featmap::DictionarySpec;
use crate::solvers::{lasso_regression, LassoFit, PenaltyRule, SolverOptions};

/// A fitted regression function.
pub trait RegressionLearner: Send + Sync {
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> f64;

    /// Predictions for every row; callers have already checked the width.
    fn predict_rows(&self, data: &Dataset) -> Vec<f64> {
        data.rows().map(|r| self.predict(r)).collect()
    }
}

pub fn predict_batch(learner: &dyn RegressionLearner, data: &Dataset) -> Result<Vec<f64>> {
    if data.ncols() != learner.input_dim() {
        return Err(Error::shape("prediction input", learner.input_dim(), data.ncols()));
    }
    Ok(learner.predict_rows(data))
}

/// Wraps a known function as a learner, e.g. to inject the true regression.
pub struct FnLearner<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FnLearner<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> RegressionLearner for FnLearner<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

// ---------------------------------------------------------------------------
// Lasso
// ---------------------------------------------------------------------------

/// `γ̂(x) = b(x)'β̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoLearner {
    pub dict: DictionarySpec,
    pub fit: LassoFit,
}

impl LassoLearner {
    pub fn coefficients(&self) -> &[f64] {
        &self.fit.coefficients
    }
}

impl RegressionLearner for LassoLearner {
    fn input_dim(&self) -> usize {
        self.dict.input_dim()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let b = self.dict.expand(x).expect("input width checked by caller");
        dot(&b, &self.fit.coefficients)
    }

    fn predict_rows(&self, data: &Dataset) -> Vec<f64> {
        let mut b = vec![0.0; self.dict.output_dim()];
        data.rows()
            .map(|r| {
                self.dict.expand_into(r, &mut b).expect("input width checked by caller");
                dot(&b, &self.fit.coefficients)
            })
            .collect()
    }
}

pub fn fit_lasso_learner(dict: &DictionarySpec, x: &Dataset, y: &[f64], r: f64) -> Result<LassoLearner> {
    fit_lasso_learner_with(dict, x, y, r, &SolverOptions::default())
}

pub fn fit_lasso_learner_with(
    dict: &DictionarySpec,
    x: &Dataset,
    y: &[f64],
    r: f64,
    opts: &SolverOptions,
) -> Result<LassoLearner> {
    let b = dict.expand_matrix(x)?;
    let fit = lasso_regression(&b, y, r, opts)?;
    Ok(LassoLearner {
        dict: dict.clone(),
        fit,
    })
}

// ---------------------------------------------------------------------------
// Multilayer perceptron
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub learn_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Coefficient on `½‖W‖²` summed over weight matrices (biases excluded).
    pub l2_penalty: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![32, 32, 32, 32],
            activation: Activation::Relu,
            learn_rate: 0.01,
            batch_size: 1024,
            max_epochs: 500,
            l2_penalty: 0.0002,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be nonempty and positive".into()));
        }
        if !(self.learn_rate > 0.0) || !self.learn_rate.is_finite() {
            return Err(Error::Config("learn_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("l2_penalty must be >= 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }

    /// Learnable parameter count for a given input width and scalar output.
    pub fn parameter_count(&self, input_dim: usize) -> usize {
        let mut prev = input_dim;
        let mut count = 0;
        for &w in self.hidden_layers.iter().chain(std::iter::once(&1)) {
            count += prev * w + w;
            prev = w;
        }
        count
    }
}

/// Fully connected ReLU network with a linear scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Parameter gradient with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut prev = input_dim;
        for &w in hidden.iter().chain(std::iter::once(&1)) {
            let bound = (6.0 / prev as f64).sqrt();
            weights.push(DMatrix::from_fn(w, prev, |_, _| rng.random_range(-bound..bound)));
            biases.push(DVector::zeros(w));
            prev = w;
        }
        Self { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Widths from input to output.
    pub fn layer_widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.weights.iter().map(|w| w.nrows()))
            .collect()
    }

    /// Flat parameters: each layer's weights (column-major) then its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("network parameters", self.num_params(), params.len()));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&params[off..off + n]);
            off += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&params[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_squared()).sum()
    }

    /// Column `i` of the result is sample `rows[i]`.
    fn batch_input(data: &Dataset, rows: &[usize]) -> DMatrix<f64> {
        let k = data.ncols();
        let mut m = DMatrix::zeros(k, rows.len());
        for (c, &i) in rows.iter().enumerate() {
            m.column_mut(c).copy_from_slice(data.row(i));
        }
        m
    }

    /// Pre-activations of every layer for a batch (one sample per column).
    fn forward(&self, input: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = input.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &act;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                act = z.map(|v| v.max(0.0));
            }
            pre.push(z);
        }
        pre
    }

    pub fn predict_batch_matrix(&self, input: &DMatrix<f64>) -> Vec<f64> {
        self.forward(input).pop().map(|z| z.as_slice().to_vec()).unwrap_or_default()
    }

    /// Mean squared error plus `½ λ ‖W‖²`, and its gradient.
    pub fn loss_and_gradient(&self, input: &DMatrix<f64>, y: &[f64], l2: f64) -> (f64, MlpGradient) {
        let n = y.len() as f64;
        let pre = self.forward(input);
        let out = pre.last().expect("at least one layer");
        let mut mse = 0.0;
        let mut delta = DMatrix::zeros(1, y.len());
        for (c, &t) in y.iter().enumerate() {
            let e = out[(0, c)] - t;
            mse += e * e;
            delta[(0, c)] = 2.0 * e / n;
        }
        let loss = mse / n + 0.5 * l2 * self.weight_norm_sq();

        let layers = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); layers];
        let mut gb = vec![DVector::zeros(0); layers];
        for l in (0..layers).rev() {
            let prev_act = if l == 0 {
                input.clone()
            } else {
                pre[l - 1].map(|v| v.max(0.0))
            };
            gw[l] = &delta * prev_act.transpose() + &self.weights[l] * l2;
            gb[l] = delta.column_sum();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                back.zip_apply(&pre[l - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        (loss, MlpGradient { weights: gw, biases: gb })
    }

    /// Mean squared error over the whole dataset, without the penalty.
    pub fn mse(&self, data: &Dataset, y: &[f64], chunk: usize) -> f64 {
        let idx: Vec<usize> = (0..data.nrows()).collect();
        let mut sse = 0.0;
        for rows in idx.chunks(chunk.max(1)) {
            let preds = self.predict_batch_matrix(&Self::batch_input(data, rows));
            sse += preds.iter().zip(rows).map(|(p, &i)| (p - y[i]).powi(2)).sum::<f64>();
        }
        sse / data.nrows().max(1) as f64
    }
}

impl MlpGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

/// Trained network plus the bookkeeping needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLearner {
    cfg: MlpConfig,
    net: Mlp,
    velocity: Option<(Vec<DMatrix<f64>>, Vec<DVector<f64>>)>,
    epochs_trained: usize,
    last_loss: f64,
}

const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MlpFile {
    version: u32,
    config: MlpConfig,
    layer_widths: Vec<usize>,
    epochs_trained: usize,
    params: Vec<f64>,
}

impl MlpLearner {
    /// Untrained network initialized from `cfg.seed`.
    pub fn new(cfg: &MlpConfig, input_dim: usize) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("network input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = Mlp::init(input_dim, &cfg.hidden_layers, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            net,
            velocity: None,
            epochs_trained: 0,
            last_loss: f64::NAN,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    /// Full-data training loss after the last completed epoch.
    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Runs `epochs` more epochs of mini-batch SGD.
    ///
    /// Each epoch's shuffle is seeded by `(seed, epoch index)`, so training
    /// in several calls gives the same network as one call with the total.
    pub fn train(&mut self, x: &Dataset, y: &[f64], epochs: usize) -> Result<()> {
        if x.ncols() != self.net.input_dim() {
            return Err(Error::shape("training input", self.net.input_dim(), x.ncols()));
        }
        if x.nrows() != y.len() {
            return Err(Error::shape("training response", x.nrows(), y.len()));
        }
        if x.is_empty() {
            return Err(Error::EmptySample("network training data"));
        }
        if self.epochs_trained + epochs > self.cfg.max_epochs {
            return Err(Error::Config(format!(
                "requested {} total epochs, max_epochs is {}",
                self.epochs_trained + epochs,
                self.cfg.max_epochs
            )));
        }
        let lr = self.cfg.learn_rate;
        let mom = self.cfg.momentum;
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        for _ in 0..epochs {
            let epoch = self.epochs_trained + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            rng.set_stream(epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
            for rows in order.chunks(self.cfg.batch_size) {
                let input = Mlp::batch_input(x, rows);
                let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                let (_, grad) = self.net.loss_and_gradient(&input, &yb, self.cfg.l2_penalty);
                if mom > 0.0 {
                    let vel = self.velocity.get_or_insert_with(|| {
                        (
                            grad.weights.iter().map(|g| DMatrix::zeros(g.nrows(), g.ncols())).collect(),
                            grad.biases.iter().map(|g| DVector::zeros(g.len())).collect(),
                        )
                    });
                    for l in 0..grad.weights.len() {
                        vel.0[l] = &vel.0[l] * mom - &grad.weights[l] * lr;
                        vel.1[l] = &vel.1[l] * mom - &grad.biases[l] * lr;
                        self.net.weights[l] += &vel.0[l];
                        self.net.biases[l] += &vel.1[l];
                    }
                } else {
                    for l in 0..grad.weights.len() {
                        self.net.weights[l] -= &grad.weights[l] * lr;
                        self.net.biases[l] -= &grad.biases[l] * lr;
                    }
                }
            }
            let loss = self.net.mse(x, y, self.cfg.batch_size)
                + 0.5 * self.cfg.l2_penalty * self.net.weight_norm_sq();
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            self.last_loss = loss;
            self.epochs_trained = epoch;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MlpFile {
            version: MLP_FORMAT_VERSION,
            config: self.cfg.clone(),
            layer_widths: self.net.layer_widths(),
            epochs_trained: self.epochs_trained,
            params: self.net.params(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Config(e.to_string()))
    }

    /// Restores parameters saved by [`MlpLearner::to_json`]. Momentum state is not saved.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: MlpFile = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if file.version != MLP_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported network file version {}", file.version)));
        }
        let mut learner = Self::new(&file.config, file.layer_widths[0])?;
        if learner.net.layer_widths() != file.layer_widths {
            return Err(Error::Config("layer widths do not match the stored configuration".into()));
        }
        learner.net.set_params(&file.params)?;
        learner.epochs_trained = file.epochs_trained;
        Ok(learner)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

impl RegressionLearner for MlpLearner {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let input = DMatrix::from_column_slice(x.len(), 1, x);
        self.net.predict_batch_matrix(&input)[0]
    }

    fn predict_rows(&self, data: &Dataset) -> Vec<f64> {
        let idx: Vec<usize> = (0..data.nrows()).collect();
        let mut out = Vec::with_capacity(data.nrows());
        for rows in idx.chunks(4096) {
            out.extend(self.net.predict_batch_matrix(&Mlp::batch_input(data, rows)));
        }
        out
    }
}

pub fn fit_mlp_learner(cfg: &MlpConfig, x: &Dataset, y: &[f64], epochs: usize) -> Result<MlpLearner> {
    if epochs > cfg.max_epochs {
        return Err(Error::Config(format!(
            "epochs ({epochs}) exceeds max_epochs ({})",
            cfg.max_epochs
        )));
    }
    let mut learner = MlpLearner::new(cfg, x.ncols())?;
    learner.train(x, y, epochs)?;
    Ok(learner)
}

// ---------------------------------------------------------------------------
// Factories for per-fold refitting
// ---------------------------------------------------------------------------

/// Builds a fresh learner on a training subsample.
pub trait LearnerFactory: Sync {
    fn fit(&self, x: &Dataset, y: &[f64]) -> Result<Box<dyn RegressionLearner>>;

    /// Smallest training subsample the learner accepts.
    fn min_rows(&self) -> usize {
        1
    }
}

impl<F> LearnerFactory for F
where
    F: Fn(&Dataset, &[f64]) -> Result<Box<dyn RegressionLearner>> + Sync,
{
    fn fit(&self, x: &Dataset, y: &[f64]) -> Result<Box<dyn RegressionLearner>> {
        self(x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFactory {
    pub dict: DictionarySpec,
    pub penalty: PenaltyRule,
    pub opts: SolverOptions,
}

impl LearnerFactory for LassoFactory {
    fn fit(&self, x: &Dataset, y: &[f64]) -> Result<Box<dyn RegressionLearner>> {
        let r = self.penalty.resolve(self.dict.output_dim(), x.nrows());
        Ok(Box::new(fit_lasso_learner_with(&self.dict, x, y, r, &self.opts)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpFactory {
    pub cfg: MlpConfig,
    pub epochs: usize,
}

impl LearnerFactory for MlpFactory {
    fn fit(&self, x: &Dataset, y: &[f64]) -> Result<Box<dyn RegressionLearner>> {
        Ok(Box::new(fit_mlp_learner(&self.cfg, x, y, self.epochs)?))
    }

    fn min_rows(&self) -> usize {
        self.cfg.batch_size
    }
}
