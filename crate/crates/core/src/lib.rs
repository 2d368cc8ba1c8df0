//! Estimation of linear regression coefficients from truncated samples.
//!
//! A sample `(x, y)` with `y = w*^T x + eps`, `eps ~ N(0, 1)`, is observed only
//! when `y` lands in a known set `S`. The estimator runs projected stochastic
//! gradient descent on the negative log-likelihood of the truncated model,
//! drawing gradient samples from truncated normals and projecting onto a
//! convex domain described by a spectral constraint.

pub mod datagen;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod likelihood;
pub mod linalg;
pub mod projection;
pub mod sampler;
pub mod sets;
pub mod sgd;
pub mod special;

pub use datagen::{generate, ols, relu_reduce, CovariateFilter, CovariateSource, GeneratorConfig, GeneratorSpec};
pub use dataset::{Dataset, Sample};
pub use experiment::{fit_rate, run_experiment, run_relu, ExperimentPlan, Method, ReluPlan, ResultRow};
pub use error::{Error, Result};
pub use likelihood::{grad_fi, hessian_quadrature, nll, nll_single, population_gradient, truncated_moments, TruncatedMoments};
pub use projection::{project, r_star, spectral_matrix, find_separation, Domain, DomainParams, SeparationResult};
pub use sampler::{invert_monotone, sample_truncated, DerivativeBounds, SamplerAccuracy};
pub use sgd::{check_assumptions, estimate, normalize, AssumptionReport, EstimateResult, SgdConfig, ZDraw};
pub use sets::{gaussian_mass, ln_gaussian_mass, survival_probability, GaussianParams, Interval, TruncationSet};

pub use nalgebra::{DMatrix, DVector};
