//! The Gaussian-convolution diffusion path.
//!
//! `mu_t` is the law of `sqrt(1 - lambda_t) Z + sqrt(lambda_t) X` with
//! `Z ~ N(0, sigma^2 I)` and `X ~ pi`. Given a noisy point `x`, the clean
//! variable has the posterior
//!
//! ```text
//! rho_{t,x}(y) ∝ exp(-|x - sqrt(lambda) y|^2 / (2 sigma^2 (1 - lambda))) pi(y)
//! ```
//!
//! and the marginal score is the posterior expectation of any score test
//! function `A s_dsi + (I - A) s_tsi`.

mod conjugate;
mod cv;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use conjugate::ConjugatePosterior;
pub use cv::CvSchedule;

use crate::error::{invalid, Error, Result};
use crate::targets::{fill_standard_normal, ExactSampler, Target};

/// Interior clamp for `lambda` inside posterior and score evaluations.
pub const LAMBDA_EPS: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;

/// A monotone map `t in [0, 1] -> lambda in [0, 1]` with `lambda(0) = 0`
/// and `lambda(1) = 1`.
pub trait LambdaSchedule: Send + Sync {
    fn lambda(&self, t: f64) -> f64;

    /// `d lambda / dt`, by centered differences unless overridden.
    fn derivative(&self, t: f64) -> f64 {
        let lo = (t - FD_STEP).max(0.0);
        let hi = (t + FD_STEP).min(1.0);
        (self.lambda(hi) - self.lambda(lo)) / (hi - lo)
    }
}

/// Built-in schedules, selectable by name.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    Linear,
}

impl LambdaSchedule for Schedule {
    fn lambda(&self, t: f64) -> f64 {
        match self {
            Schedule::Cosine => {
                let s = (0.5 * PI * t).sin();
                s * s
            }
            Schedule::Linear => t,
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        match self {
            Schedule::Cosine => 0.5 * PI * (PI * t).sin(),
            Schedule::Linear => 1.0,
        }
    }
}

/// Wraps a closure as a schedule (finite-difference derivative).
pub struct FnSchedule<F>(pub F);

impl<F: Fn(f64) -> f64 + Send + Sync> LambdaSchedule for FnSchedule<F> {
    fn lambda(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// `sin^2(pi t / 2)`.
pub fn cosine_lambda(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(t));
    }
    Ok(Schedule::Cosine.lambda(t))
}

/// Base variance keeping the second moment constant along the path.
pub fn sigma_from_target(m2: f64, d: usize) -> Result<f64> {
    if !(m2 > 0.0) {
        return Err(invalid("second_moment", format!("must be positive, got {m2}")));
    }
    if d == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    Ok(m2 / d as f64)
}

/// Horizon `T = xi (K M2 / d)^(1/3)`.
pub fn select_t(xi: f64, steps: usize, m2: f64, d: usize) -> Result<f64> {
    if !(xi > 0.0) || steps == 0 || !(m2 > 0.0) || d == 0 {
        return Err(invalid("horizon", "xi, steps, second moment and dim must be positive"));
    }
    Ok(xi * (steps as f64 * m2 / d as f64).cbrt())
}

/// Integrand of the action upper bound,
/// `(sigma^2 d / (4 (1 - lambda)) + M2 / (4 lambda)) * lambda'(t)^2`.
pub fn action_bound_integrand(
    schedule: &dyn LambdaSchedule,
    sigma_sq_d: f64,
    m2: f64,
    t: f64,
) -> Result<f64> {
    let lambda = schedule.lambda(t);
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::OutOfRange(lambda));
    }
    let dl = schedule.derivative(t);
    Ok((sigma_sq_d / (4.0 * (1.0 - lambda)) + m2 / (4.0 * lambda)) * dl * dl)
}

/// Midpoint-rule quadrature of the action bound over `n` interior points.
pub fn action_bound(
    schedule: &dyn LambdaSchedule,
    sigma_sq_d: f64,
    m2: f64,
    n: usize,
) -> Result<f64> {
    let h = 1.0 / n as f64;
    (0..n)
        .map(|i| action_bound_integrand(schedule, sigma_sq_d, m2, (i as f64 + 0.5) * h))
        .sum::<Result<f64>>()
        .map(|s| s * h)
}

/// Analytic score of `mu_t` for an isotropic Gaussian target `N(m, s^2 I)`.
pub fn gaussian_marginal_score(
    lambda: f64,
    sigma_sq: f64,
    x: &[f64],
    mean: &[f64],
    var: f64,
) -> Vec<f64> {
    let v = lambda * var + (1.0 - lambda) * sigma_sq;
    let a = lambda.sqrt();
    x.iter().zip(mean).map(|(xi, m)| -(xi - a * m) / v).collect()
}

/// Clamps a positive `lambda` into `[LAMBDA_EPS, 1 - LAMBDA_EPS]`; zero stays zero.
#[inline]
pub fn clamp_lambda(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        0.0
    } else {
        lambda.clamp(LAMBDA_EPS, 1.0 - LAMBDA_EPS)
    }
}

/// `-|x - sqrt(lambda) y|^2 / (2 sigma^2 (1 - lambda))`.
///
/// At `lambda = 0` the factor does not depend on `y` and is taken as zero.
#[inline]
pub fn gaussian_log_factor(lambda: f64, sigma_sq: f64, x: &[f64], y: &[f64]) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let a = lambda.sqrt();
    let r: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - a * yi) * (xi - a * yi)).sum();
    -0.5 * r / (sigma_sq * (1.0 - lambda))
}

/// Adds the gradient in `y` of [`gaussian_log_factor`] to `out`.
#[inline]
pub fn add_gaussian_factor_grad(lambda: f64, sigma_sq: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
    if lambda == 0.0 {
        return;
    }
    let a = lambda.sqrt();
    let c = a / (sigma_sq * (1.0 - lambda));
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o += c * (xi - a * yi);
    }
}

/// Evaluates `A s_dsi + (I - A) s_tsi` into `out` from a cached target
/// gradient at `y`.
pub fn score_test_into(
    lambda: f64,
    sigma_sq: f64,
    x: &[f64],
    y: &[f64],
    grad_log_pi: &[f64],
    cv: &CvSchedule,
    dsi: &mut [f64],
    out: &mut [f64],
) {
    let a = lambda.sqrt();
    let inv = 1.0 / (sigma_sq * (1.0 - lambda));
    for i in 0..x.len() {
        dsi[i] = (a * y[i] - x[i]) * inv;
        out[i] = grad_log_pi[i] / a;
    }
    cv.blend(dsi, out);
}

/// The path for one run: base variance, horizon, step count and schedule.
#[derive(Clone)]
pub struct DiffusionPath {
    target: Arc<dyn Target>,
    sigma_sq: f64,
    horizon: f64,
    steps: usize,
    schedule: Schedule,
}

impl std::fmt::Debug for DiffusionPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffusionPath")
            .field("target", &self.target.name())
            .field("sigma_sq", &self.sigma_sq)
            .field("horizon", &self.horizon)
            .field("steps", &self.steps)
            .field("schedule", &self.schedule)
            .finish()
    }
}

impl DiffusionPath {
    pub fn new(
        target: Arc<dyn Target>,
        sigma_sq: f64,
        horizon: f64,
        steps: usize,
        schedule: Schedule,
    ) -> Result<Self> {
        if !(sigma_sq > 0.0) {
            return Err(invalid("sigma_sq", "must be positive"));
        }
        if !(horizon > 0.0) {
            return Err(invalid("horizon", "must be positive"));
        }
        if steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        Ok(Self {
            target,
            sigma_sq,
            horizon,
            steps,
            schedule,
        })
    }

    /// Path with `sigma^2 = M2 / d` and `T = xi (K M2 / d)^(1/3)`.
    pub fn for_target(target: Arc<dyn Target>, xi: f64, steps: usize, schedule: Schedule) -> Result<Self> {
        let d = target.dim();
        let m2 = target.second_moment();
        let sigma_sq = sigma_from_target(m2, d)?;
        let horizon = select_t(xi, steps, m2, d)?;
        Self::new(target, sigma_sq, horizon, steps, schedule)
    }

    pub fn target(&self) -> &Arc<dyn Target> {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    /// Langevin step size `h = T / K`.
    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `lambda(t)` for normalized time `t in [0, 1]`.
    pub fn lambda(&self, t: f64) -> f64 {
        self.schedule.lambda(t)
    }

    /// `lambda` at outer step `k`, i.e. at normalized time `k / K`.
    pub fn lambda_at_step(&self, k: usize) -> f64 {
        self.lambda(k as f64 / self.steps as f64)
    }

    fn interior_lambda(&self, t: f64) -> Result<f64> {
        let lambda = self.lambda(t);
        if lambda >= 1.0 {
            return Err(Error::DegeneratePosterior);
        }
        Ok(lambda)
    }

    /// `log rho~_{t,x}(y)`: Gaussian factor plus the target log-density.
    pub fn posterior_log_density(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        let lambda = clamp_lambda(self.interior_lambda(t)?);
        Ok(gaussian_log_factor(lambda, self.sigma_sq, x, y) + self.target.log_density(y))
    }

    /// `grad_y log rho_{t,x}(y)`.
    pub fn posterior_grad(&self, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let lambda = clamp_lambda(self.interior_lambda(t)?);
        let mut g = vec![0.0; y.len()];
        self.target.grad_log_density(y, &mut g);
        add_gaussian_factor_grad(lambda, self.sigma_sq, x, y, &mut g);
        Ok(g)
    }

    /// The score test function `A s_dsi + (I - A) s_tsi` at `(x, y)`.
    pub fn score_test_fn(&self, t: f64, x: &[f64], y: &[f64], cv: &CvSchedule) -> Result<Vec<f64>> {
        let lambda = self.lambda(t);
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::OutOfRange(lambda));
        }
        let lambda = clamp_lambda(lambda);
        let d = y.len();
        let mut g = vec![0.0; d];
        self.target.grad_log_density(y, &mut g);
        let mut dsi = vec![0.0; d];
        let mut out = vec![0.0; d];
        score_test_into(lambda, self.sigma_sq, x, y, &g, cv, &mut dsi, &mut out);
        Ok(out)
    }

    pub fn action_bound_integrand(&self, t: f64) -> Result<f64> {
        action_bound_integrand(
            &self.schedule,
            self.sigma_sq * self.dim() as f64,
            self.target.second_moment(),
            t,
        )
    }

    /// Draws `(x, y)` with `y ~ pi` and `x = sqrt(1 - lambda) Z + sqrt(lambda) y`,
    /// so that `x ~ mu_t` and `y ~ rho_{t,x}`.
    pub fn exact_path_sample(
        &self,
        t: f64,
        sampler: &dyn ExactSampler,
        rng: &mut dyn RngCore,
    ) -> (Vec<f64>, Vec<f64>) {
        let lambda = self.lambda(t);
        exact_path_sample(lambda, self.sigma_sq, self.dim(), sampler, rng)
    }
}

/// [`DiffusionPath::exact_path_sample`] with explicit `lambda`.
pub fn exact_path_sample(
    lambda: f64,
    sigma_sq: f64,
    dim: usize,
    sampler: &dyn ExactSampler,
    rng: &mut dyn RngCore,
) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; dim];
    sampler.sample_into(rng, &mut y);
    let mut x = vec![0.0; dim];
    fill_standard_normal(rng, &mut x);
    let s = ((1.0 - lambda) * sigma_sq).sqrt();
    let a = lambda.sqrt();
    for (xi, yi) in x.iter_mut().zip(&y) {
        *xi = s * *xi + a * yi;
    }
    (x, y)
}
