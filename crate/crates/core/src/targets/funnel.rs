use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{ExactSampler, Target, LN_2PI};
use crate::error::{invalid, Result};

const FUNNEL_DIM: usize = 10;

/// Neal's funnel: `x1 ~ N(0, eta^2)`, `x_i | x1 ~ N(0, exp(x1))` for `i = 2..10`.
#[derive(Clone, Debug)]
pub struct Funnel {
    eta_sq: f64,
}

pub fn make_funnel(eta_sq: f64) -> Result<Funnel> {
    if !(eta_sq > 0.0) || !eta_sq.is_finite() {
        return Err(invalid("eta_sq", format!("must be positive, got {eta_sq}")));
    }
    Ok(Funnel { eta_sq })
}

impl Funnel {
    pub fn eta_sq(&self) -> f64 {
        self.eta_sq
    }
}

impl Target for Funnel {
    fn name(&self) -> &str {
        "funnel"
    }

    fn dim(&self) -> usize {
        FUNNEL_DIM
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let v = x[0];
        let rest = (FUNNEL_DIM - 1) as f64;
        let tail: f64 = x[1..].iter().map(|z| z * z).sum();
        -0.5 * v * v / self.eta_sq - 0.5 * (LN_2PI + self.eta_sq.ln())
            - 0.5 * tail * (-v).exp()
            - 0.5 * rest * (LN_2PI + v)
    }

    fn grad_log_density(&self, x: &[f64], grad: &mut [f64]) {
        let v = x[0];
        let inv = (-v).exp();
        let rest = (FUNNEL_DIM - 1) as f64;
        let tail: f64 = x[1..].iter().map(|z| z * z).sum();
        grad[0] = -v / self.eta_sq + 0.5 * (tail * inv - rest);
        for (g, z) in grad[1..].iter_mut().zip(&x[1..]) {
            *g = -z * inv;
        }
    }

    fn second_moment(&self) -> f64 {
        self.eta_sq + (FUNNEL_DIM - 1) as f64 * (0.5 * self.eta_sq).exp()
    }

    fn compact_radius(&self) -> Option<f64> {
        Some(2.12)
    }

    fn gaussian_tau(&self) -> Option<f64> {
        Some(0.0)
    }

    fn exact_sampler(&self) -> Option<&dyn ExactSampler> {
        Some(self)
    }
}

impl ExactSampler for Funnel {
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let z: f64 = StandardNormal.sample(rng);
        let v = self.eta_sq.sqrt() * z;
        out[0] = v;
        let s = (0.5 * v).exp();
        for o in out[1..].iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *o = s * z;
        }
    }
}
