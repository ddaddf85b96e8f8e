//! Diffusion-path sequential Monte Carlo.
//!
//! Samples are moved along a Gaussian-convolution path from `N(0, sigma^2 I)`
//! to the target with annealed Langevin dynamics. The time-varying score
//! driving each sample is estimated by a per-sample SMC cloud of auxiliary
//! particles that tracks the posterior of the clean variable given the noisy
//! one, combining the denoising and target score identities with
//! control-variate weights learned from the whole ensemble.
//!
//! Modules:
//! - [`targets`]: benchmark distributions and dataset ingestion
//! - [`path`]: schedules, posteriors, score test functions, Gaussian oracles
//! - [`smc`]: log-weights, ESS, stratified resampling, MALA
//! - [`estimation`]: score-covariance and control-variate schedule estimation
//! - [`samplers`]: DPSMC (plain and tempered) and the AIS/SMC baselines
//! - [`metrics`]: Sinkhorn W2, sliced KS, predictive likelihood, score MSE

pub mod error;
pub mod estimation;
pub mod metrics;
pub mod path;
pub mod rng;
pub mod samplers;
pub mod smc;
pub mod targets;

pub use error::{Error, Result};
