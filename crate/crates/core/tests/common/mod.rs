#![allow(dead_code)]

use covshift_dml::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n × k` independent normals with mean `shift` and unit sd.
pub fn normal_rows(rng: &mut ChaCha8Rng, n: usize, k: usize, shift: f64) -> Dataset {
    Dataset::new(n, k, (0..n * k).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

pub fn noise(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    sd * rng.sample::<f64, _>(StandardNormal)
}

/// Outcomes `g(x) + N(0, sd²)`.
pub fn outcomes(rng: &mut ChaCha8Rng, x: &Dataset, g: impl Fn(&[f64]) -> f64, sd: f64) -> Vec<f64> {
    x.rows().map(|r| g(r) + noise(rng, sd)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
