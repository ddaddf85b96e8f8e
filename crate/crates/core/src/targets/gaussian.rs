use rand::RngCore;

use super::{fill_standard_normal, norm_sq, ExactSampler, Target, LN_2PI};
use crate::error::{invalid, Result};

/// Isotropic Gaussian `N(mean, variance * I)`.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: Vec<f64>,
    variance: f64,
}

pub fn make_gaussian(mean: Vec<f64>, variance: f64) -> Result<Gaussian> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(invalid("variance", format!("must be positive, got {variance}")));
    }
    if mean.is_empty() {
        return Err(invalid("mean", "must have at least one coordinate"));
    }
    Ok(Gaussian { mean, variance })
}

impl Gaussian {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl Target for Gaussian {
    fn name(&self) -> &str {
        "gaussian"
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        let r: f64 = x.iter().zip(&self.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        -0.5 * r / self.variance - 0.5 * d * (LN_2PI + self.variance.ln())
    }

    fn grad_log_density(&self, x: &[f64], grad: &mut [f64]) {
        for ((g, a), m) in grad.iter_mut().zip(x).zip(&self.mean) {
            *g = -(a - m) / self.variance;
        }
    }

    fn second_moment(&self) -> f64 {
        norm_sq(&self.mean) + self.mean.len() as f64 * self.variance
    }

    fn exact_sampler(&self) -> Option<&dyn ExactSampler> {
        Some(self)
    }
}

impl ExactSampler for Gaussian {
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        fill_standard_normal(rng, out);
        let s = self.variance.sqrt();
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o = m + s * *o;
        }
    }
}
