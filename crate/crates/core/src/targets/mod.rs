//! Benchmark target distributions.
//!
//! A target exposes an (unnormalized) log-density, its gradient and the
//! scalar metadata the samplers use to set up the diffusion path: the second
//! moment `E[|X|^2]` and, when known, the compact-support radius `R` and the
//! Gaussian smoothing scale `tau`.

mod dataset;
mod funnel;
mod gaussian;
mod logreg;
mod mixture;
mod rings;

use std::path::PathBuf;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, DatasetFormat, LabeledDataset, SplitSidecar};
pub use funnel::{make_funnel, Funnel};
pub use gaussian::{make_gaussian, Gaussian};
pub use logreg::{make_logreg, LogisticRegression};
pub(crate) use logreg::{logit, softplus};
pub use mixture::{make_gmm40, GaussianMixture};
pub use rings::{make_rings, make_rings_with, Rings, RingsDensity};

use crate::error::Result;

/// An unnormalized density on `R^dim` with gradient and moment metadata.
pub trait Target: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Natural-log density, up to an additive constant.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Writes `grad log pi(x)` into `grad`.
    fn grad_log_density(&self, x: &[f64], grad: &mut [f64]);

    /// Log-density and gradient in one pass.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.grad_log_density(x, grad);
        self.log_density(x)
    }

    /// `E[|X|^2]`, exact or a declared approximation.
    fn second_moment(&self) -> f64;

    fn compact_radius(&self) -> Option<f64> {
        None
    }

    fn gaussian_tau(&self) -> Option<f64> {
        None
    }

    fn exact_sampler(&self) -> Option<&dyn ExactSampler> {
        None
    }
}

/// Targets that can be sampled exactly (used for references and oracles).
pub trait ExactSampler: Send + Sync {
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]);
}

/// Draws `n` exact samples into a row-major `n x dim` buffer.
pub fn sample_exact(
    target: &dyn Target,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let sampler = target
        .exact_sampler()
        .ok_or_else(|| crate::Error::NoExactSampler(target.name().to_string()))?;
    let d = target.dim();
    let mut out = vec![0.0; n * d];
    for row in out.chunks_exact_mut(d) {
        sampler.sample_into(rng, row);
    }
    Ok(out)
}

pub(crate) fn fill_standard_normal(rng: &mut dyn RngCore, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Declarative target description used by run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian {
        mean: Vec<f64>,
        variance: f64,
    },
    Gmm40 {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Rings {
        #[serde(default)]
        density: RingsDensity,
    },
    Funnel {
        #[serde(default = "default_eta_sq")]
        eta_sq: f64,
    },
    Logreg {
        path: PathBuf,
        format: DatasetFormat,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_eta_sq() -> f64 {
    3.0
}

/// A built target, plus the dataset when the target is a regression posterior.
#[derive(Clone)]
pub struct BuiltTarget {
    pub target: Arc<dyn Target>,
    pub dataset: Option<Arc<LabeledDataset>>,
}

impl TargetSpec {
    pub fn label(&self) -> String {
        match self {
            TargetSpec::Gaussian { mean, .. } => format!("gaussian{}", mean.len()),
            TargetSpec::Gmm40 { dim, .. } => format!("gmm40_d{dim}"),
            TargetSpec::Rings { .. } => "rings".into(),
            TargetSpec::Funnel { .. } => "funnel".into(),
            TargetSpec::Logreg { format, .. } => format!("logreg_{}", format.as_str()),
        }
    }

    pub fn build(&self) -> Result<BuiltTarget> {
        let (target, dataset): (Arc<dyn Target>, _) = match self {
            TargetSpec::Gaussian { mean, variance } => {
                (Arc::new(make_gaussian(mean.clone(), *variance)?), None)
            }
            TargetSpec::Gmm40 { dim, seed } => (Arc::new(make_gmm40(*dim, *seed)?), None),
            TargetSpec::Rings { density } => (Arc::new(make_rings_with(*density)), None),
            TargetSpec::Funnel { eta_sq } => (Arc::new(make_funnel(*eta_sq)?), None),
            TargetSpec::Logreg {
                path,
                format,
                split_seed,
            } => {
                let data = Arc::new(load_dataset(path, *format, *split_seed)?);
                (Arc::new(make_logreg(data.clone())?), Some(data))
            }
        };
        Ok(BuiltTarget { target, dataset })
    }
}
