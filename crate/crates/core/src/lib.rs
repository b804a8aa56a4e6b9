//! Automatic debiased machine learning of linear functionals under covariate shift.
//!
//! A regression `γ̂(x) ≈ E[Y | X = x]` is learned on training data and a
//! linear functional such as the mean outcome `E[γ₀(Z)]` is evaluated on
//! field data whose covariate distribution differs. The plug-in average is
//! corrected with a Riesz representer `α̂(x) = b(x)'ρ̂` fit by an
//! ℓ¹-penalized quadratic program whose linear term comes from field data
//! and whose curvature comes from training data.
//!
//! Modules, bottom up:
//!
//! - [`featmap`]: polynomial dictionary `b(x)`.
//! - [`solvers`]: coordinate descent for the Lasso and the penalized quadratic program.
//! - [`learners`]: Lasso and multilayer-perceptron regressions.
//! - [`riesz`]: functionals, moments `(M̂, Q̂)` and the representer fit.
//! - [`debias`]: cross-fit, no-cross-fit, pseudo-inverse and two-sample estimators.
//! - [`simgen`]: random sparse polynomial data with covariate shift.
//! - [`harness`]: replication study, aggregation and output files.

pub mod data;
pub mod debias;
pub mod error;
pub mod featmap;
pub mod harness;
pub mod learners;
pub mod riesz;
pub mod simgen;
pub mod solvers;
pub mod stats;

pub use data::{Dataset, DesignMatrix};
pub use error::{Error, Result};
