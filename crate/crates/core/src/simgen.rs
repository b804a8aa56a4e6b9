//! Monte Carlo data-generating process.
//!
//! Outcomes are a sparse random polynomial of the covariates plus Gaussian
//! noise:
//!
//! ```text
//! g(u) = s · (α₀ + Σ_{q=1}^{Q} α_q (Σ_k β_qk u_k)^q),    Y = g(X) + ε,  ε ~ N(0, σ²)
//! ```
//!
//! Training and validation covariates are a mixture of a standard normal and
//! a low-weight uniform on `[−5, 5]` in every coordinate. Field covariates use
//! the same mixture with the normal mean shifted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Unit in which the field mean shift is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Shift is `shift × 1`, the covariate standard deviation.
    #[default]
    CovariateSd,
    /// Shift is `shift × σ`, the outcome noise standard deviation.
    NoiseSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimKnobs {
    pub dim: usize,
    pub order: usize,
    /// Probability that each `β_qk` is set to zero.
    pub sparsity: f64,
    pub first_dim_scale: f64,
    pub last_dim_scale: f64,
    pub noise_sd: f64,
    pub shift: f64,
    pub shift_mode: ShiftMode,
    pub uniform_weight: f64,
    pub uniform_half_width: f64,
    pub pilot_size: usize,
    /// Target standard deviation of `g` on the unshifted pilot draw.
    pub target_sd: f64,
}

impl Default for SimKnobs {
    fn default() -> Self {
        Self {
            dim: 6,
            order: 3,
            sparsity: 0.6,
            first_dim_scale: 1.71,
            last_dim_scale: 0.29,
            noise_sd: 0.1,
            shift: 1.1,
            shift_mode: ShiftMode::CovariateSd,
            uniform_weight: 0.05,
            uniform_half_width: 5.0,
            pilot_size: 100_000,
            target_sd: 0.5,
        }
    }
}

impl SimKnobs {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.order == 0 {
            return Err(Error::Config("dim and order must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Config("sparsity must lie in [0, 1]".into()));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::Config("noise_sd must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.uniform_weight) {
            return Err(Error::Config("uniform_weight must lie in [0, 1)".into()));
        }
        if !(self.uniform_half_width > 0.0) || self.pilot_size < 2 || !(self.target_sd > 0.0) {
            return Err(Error::Config("uniform_half_width, pilot_size and target_sd must be positive".into()));
        }
        Ok(())
    }

    fn shift_value(&self) -> f64 {
        match self.shift_mode {
            ShiftMode::CovariateSd => self.shift,
            ShiftMode::NoiseSd => self.shift * self.noise_sd,
        }
    }
}

/// One random polynomial specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub dim: usize,
    pub order: usize,
    /// `α₀, ..., α_Q`.
    pub alpha: Vec<f64>,
    /// `Q` rows of `K` inner-sum weights, after sparsity and `dim_scale`.
    pub beta: Vec<Vec<f64>>,
    pub sparsity: f64,
    pub dim_scale: Vec<f64>,
    pub output_scale: f64,
    pub noise_sd: f64,
    /// Normal mean of field covariates, per dimension.
    pub shift: Vec<f64>,
    pub uniform_weight: f64,
    pub uniform_half_width: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.order == 0 {
            return Err(Error::Config("dim and order must be positive".into()));
        }
        if self.alpha.len() != self.order + 1 {
            return Err(Error::shape("alpha", self.order + 1, self.alpha.len()));
        }
        if self.beta.len() != self.order {
            return Err(Error::shape("beta rows", self.order, self.beta.len()));
        }
        if let Some(row) = self.beta.iter().find(|r| r.len() != self.dim) {
            return Err(Error::shape("beta columns", self.dim, row.len()));
        }
        if self.shift.len() != self.dim {
            return Err(Error::shape("shift", self.dim, self.shift.len()));
        }
        if !(self.noise_sd > 0.0) || !(0.0..1.0).contains(&self.uniform_weight) {
            return Err(Error::Config("noise_sd must be positive and uniform_weight in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SimSpec = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// `g(u)`: inner sums first, then powers, then the weighted sum.
    pub fn eval_g(&self, u: &[f64]) -> f64 {
        let mut total = self.alpha[0];
        for (q, row) in self.beta.iter().enumerate() {
            let inner: f64 = row.iter().zip(u).map(|(b, x)| b * x).sum();
            total += self.alpha[q + 1] * inner.powi(q as i32 + 1);
        }
        self.output_scale * total
    }
}

/// Role of a random stream within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Spec = 1,
    Pilot = 2,
    Train = 3,
    Validate = 4,
    Field = 5,
    Oracle = 6,
    Folds = 7,
    Learner = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream `(master, spec_id, rep_id, role)`.
pub fn stream_seed(master: u64, spec_id: u64, rep_id: u64, role: StreamRole) -> u64 {
    let mut h = splitmix64(master);
    for part in [spec_id, rep_id, role as u64] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn stream(master: u64, spec_id: u64, rep_id: u64, role: StreamRole) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, spec_id, rep_id, role))
}

/// Draws a specification. `seed` fixes `α`, `β`, the sparsity pattern and the pilot draw.
pub fn random_spec(seed: u64, knobs: &SimKnobs) -> Result<SimSpec> {
    knobs.validate()?;
    let (k, q) = (knobs.dim, knobs.order);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0, StreamRole::Spec));
    let alpha: Vec<f64> = (0..=q).map(|_| rng.sample(StandardNormal)).collect();
    let beta_sd = 1.0 / (k as f64).sqrt();
    let mut dim_scale = vec![1.0; k];
    dim_scale[0] = knobs.first_dim_scale;
    if k > 1 {
        dim_scale[k - 1] = knobs.last_dim_scale;
    }
    let beta: Vec<Vec<f64>> = (0..q)
        .map(|_| {
            (0..k)
                .map(|j| {
                    let draw: f64 = rng.sample::<f64, _>(StandardNormal) * beta_sd;
                    let keep = rng.random::<f64>() >= knobs.sparsity;
                    if keep {
                        draw * dim_scale[j]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut spec = SimSpec {
        dim: k,
        order: q,
        alpha,
        beta,
        sparsity: knobs.sparsity,
        dim_scale,
        output_scale: 1.0,
        noise_sd: knobs.noise_sd,
        shift: vec![knobs.shift_value(); k],
        uniform_weight: knobs.uniform_weight,
        uniform_half_width: knobs.uniform_half_width,
        seed,
    };
    let mut pilot_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, 0, StreamRole::Pilot));
    let pilot = draw_covariates(&spec, knobs.pilot_size, false, &mut pilot_rng)?;
    let values: Vec<f64> = pilot.rows().map(|u| spec.eval_g(u)).collect();
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    spec.output_scale = if sd > 1e-12 { knobs.target_sd / sd } else { 1.0 };
    Ok(spec)
}

pub fn eval_g(spec: &SimSpec, u: &[f64]) -> Result<f64> {
    if u.len() != spec.dim {
        return Err(Error::shape("simulation input", spec.dim, u.len()));
    }
    Ok(spec.eval_g(u))
}

/// `n` covariate rows; field rows (`shifted`) have the normal mean moved by `spec.shift`.
pub fn draw_covariates(spec: &SimSpec, n: usize, shifted: bool, rng: &mut impl Rng) -> Result<Dataset> {
    let k = spec.dim;
    let h = spec.uniform_half_width;
    let mut values = Vec::with_capacity(n * k);
    for _ in 0..n {
        let uniform = spec.uniform_weight > 0.0 && rng.random::<f64>() < spec.uniform_weight;
        for j in 0..k {
            let v = if uniform {
                rng.random_range(-h..=h)
            } else {
                let z: f64 = rng.sample(StandardNormal);
                if shifted {
                    z + spec.shift[j]
                } else {
                    z
                }
            };
            values.push(v);
        }
    }
    Dataset::new(n, k, values)
}

/// `y_i = g(x_i) + ε_i`.
pub fn draw_outcomes(spec: &SimSpec, x: &Dataset, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if x.ncols() != spec.dim {
        return Err(Error::shape("covariate columns", spec.dim, x.ncols()));
    }
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    Ok(x.rows().map(|u| spec.eval_g(u) + noise.sample(rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub value: f64,
    pub mc_se: f64,
}

/// Monte Carlo estimate of `E[g(Z) + ε]` over the shifted distribution.
pub fn oracle_theta(spec: &SimSpec, n_oracle: usize, rng: &mut impl Rng) -> Result<OracleTruth> {
    if n_oracle < 10_000 {
        return Err(Error::Config(format!("n_oracle must be at least 10000, got {n_oracle}")));
    }
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    const CHUNK: usize = 65_536;
    // Welford accumulation.
    let (mut count, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    let mut remaining = n_oracle;
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        let z = draw_covariates(spec, n, true, rng)?;
        for u in z.rows() {
            let v = spec.eval_g(u) + noise.sample(rng);
            count += 1.0;
            let d = v - mean;
            mean += d / count;
            m2 += d * (v - mean);
        }
        remaining -= n;
    }
    let var = m2 / (count - 1.0);
    Ok(OracleTruth {
        value: mean,
        mc_se: (var / count).sqrt(),
    })
}

/// Ground truth for a specification from its dedicated oracle stream.
pub fn spec_truth(spec: &SimSpec, n_oracle: usize, master: u64, spec_id: u64) -> Result<OracleTruth> {
    oracle_theta(spec, n_oracle, &mut stream(master, spec_id, 0, StreamRole::Oracle))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub n_train: usize,
    pub n_validate: usize,
    pub n_field: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSample {
    pub x_train: Dataset,
    pub y_train: Vec<f64>,
    pub v_validate: Dataset,
    pub y_validate: Vec<f64>,
    pub z_field: Dataset,
    pub truth_theta: f64,
    pub truth_mc_se: f64,
}

/// One replication: each of the training, validation and field samples has its own stream.
pub fn draw_sample(
    spec: &SimSpec,
    sizes: SampleSizes,
    master: u64,
    spec_id: u64,
    rep_id: u64,
    truth: OracleTruth,
) -> Result<SimSample> {
    if sizes.n_train == 0 || sizes.n_field == 0 {
        return Err(Error::EmptySample("simulation sample sizes"));
    }
    let mut rng = stream(master, spec_id, rep_id, StreamRole::Train);
    let x_train = draw_covariates(spec, sizes.n_train, false, &mut rng)?;
    let y_train = draw_outcomes(spec, &x_train, &mut rng)?;
    let mut rng = stream(master, spec_id, rep_id, StreamRole::Validate);
    let v_validate = draw_covariates(spec, sizes.n_validate, false, &mut rng)?;
    let y_validate = draw_outcomes(spec, &v_validate, &mut rng)?;
    let mut rng = stream(master, spec_id, rep_id, StreamRole::Field);
    let z_field = draw_covariates(spec, sizes.n_field, true, &mut rng)?;
    Ok(SimSample {
        x_train,
        y_train,
        v_validate,
        y_validate,
        z_field,
        truth_theta: truth.value,
        truth_mc_se: truth.mc_se,
    })
}
