//! Weighted particle machinery: log-weights, ESS, stratified resampling,
//! MALA moves with adaptive step size and incremental weights.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::path::{clamp_lambda, gaussian_log_factor, DiffusionPath};
use crate::targets::{fill_standard_normal, log_sum_exp, Target};

/// Self-normalized weights from log-weights via the max-subtraction trick.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let mut w = Vec::with_capacity(log_weights.len());
    normalize_into(log_weights, &mut w)?;
    Ok(w)
}

/// [`normalize_log_weights`] writing into a reusable buffer.
pub fn normalize_into(log_weights: &[f64], out: &mut Vec<f64>) -> Result<()> {
    let m = log_weights
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::AllWeightsZero);
    }
    out.clear();
    let mut total = 0.0;
    for &l in log_weights {
        let w = if l.is_nan() { 0.0 } else { (l - m).exp() };
        total += w;
        out.push(w);
    }
    out.iter_mut().for_each(|w| *w /= total);
    Ok(())
}

/// `log sum exp(log_weights)`.
pub fn log_normalizer(log_weights: &[f64]) -> f64 {
    log_sum_exp(log_weights)
}

/// Effective sample size `1 / sum w_j^2` of the self-normalized weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let w = normalize_log_weights(log_weights)?;
    Ok(ess_of_normalized(&w))
}

pub fn ess_of_normalized(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

/// Stratified resampling: one uniform per stratum `[i/N, (i+1)/N)` inverted
/// through the cumulative weights.
pub fn stratified_resample(log_weights: &[f64], rng: &mut dyn RngCore) -> Result<Vec<usize>> {
    let w = normalize_log_weights(log_weights)?;
    Ok(stratified_from_weights(&w, rng))
}

/// [`stratified_resample`] for already normalized weights.
pub fn stratified_from_weights(w: &[f64], rng: &mut dyn RngCore) -> Vec<usize> {
    let n = w.len();
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    let mut cum = w[0];
    for i in 0..n {
        let u = (i as f64 + rng.random::<f64>()) / n as f64;
        while u >= cum && j + 1 < n {
            j += 1;
            cum += w[j];
        }
        out.push(j);
    }
    out
}

/// Geometric step-size adaptation; ties shrink.
pub fn adapt_step(h: f64, acc_rate: f64, target: f64, factor: f64) -> f64 {
    if acc_rate > target {
        h * factor
    } else {
        h / factor
    }
}

pub const TARGET_ACCEPTANCE: f64 = 0.75;
pub const ADAPT_FACTOR: f64 = 1.1;

/// Draws `y + h g + sqrt(2h / beta) xi` into `out`.
pub fn mala_propose(y: &[f64], grad: &[f64], h: f64, beta: f64, rng: &mut dyn RngCore, out: &mut [f64]) {
    fill_standard_normal(rng, out);
    let s = (2.0 * h / beta).sqrt();
    for ((o, yi), gi) in out.iter_mut().zip(y).zip(grad) {
        *o = yi + h * gi + s * *o;
    }
}

/// `log q(to | from)` up to a constant shared by both directions.
#[inline]
fn log_q(to: &[f64], from: &[f64], grad_from: &[f64], h: f64, beta: f64) -> f64 {
    let r: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| {
            let e = t - f - h * g;
            e * e
        })
        .sum();
    -beta * r / (4.0 * h)
}

/// Log Metropolis-Hastings ratio for a move `y -> prop` targeting
/// `rho^beta` with the MALA proposal above. `logp` values are untempered.
#[allow(clippy::too_many_arguments)]
pub fn mala_log_accept(
    y: &[f64],
    logp: f64,
    grad: &[f64],
    prop: &[f64],
    logp_prop: f64,
    grad_prop: &[f64],
    h: f64,
    beta: f64,
) -> f64 {
    beta * (logp_prop - logp) + log_q(y, prop, grad_prop, h, beta) - log_q(prop, y, grad, h, beta)
}

/// Result of one MALA transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MalaOutcome {
    pub accepted: bool,
    /// The proposal had a non-finite density or gradient and was rejected.
    pub nonfinite: bool,
}

/// One MALA step on `(y, logp, grad)` in place. `eval` writes the gradient
/// of `log rho~` into its second argument and returns `log rho~`.
#[allow(clippy::too_many_arguments)]
pub fn mala_step<F>(
    y: &mut [f64],
    logp: &mut f64,
    grad: &mut [f64],
    mut eval: F,
    beta: f64,
    h: f64,
    rng: &mut dyn RngCore,
) -> MalaOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let d = y.len();
    let mut prop = vec![0.0; d];
    let mut gprop = vec![0.0; d];
    mala_propose(y, grad, h, beta, rng, &mut prop);
    let u: f64 = rng.random();
    let lp = eval(&prop, &mut gprop);
    if !lp.is_finite() || gprop.iter().any(|g| !g.is_finite()) {
        return MalaOutcome {
            accepted: false,
            nonfinite: true,
        };
    }
    let log_alpha = mala_log_accept(y, *logp, grad, &prop, lp, &gprop, h, beta);
    let accepted = u.ln() < log_alpha;
    if accepted {
        y.copy_from_slice(&prop);
        grad.copy_from_slice(&gprop);
        *logp = lp;
    }
    MalaOutcome {
        accepted,
        nonfinite: false,
    }
}

/// Gaussian part of `log rho~_k(y)` at outer step `k`.
#[inline]
pub fn log_factor_at_step(path: &DiffusionPath, k: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    let lambda = path.lambda_at_step(k);
    if lambda >= 1.0 {
        return Err(Error::DegeneratePosterior);
    }
    Ok(gaussian_log_factor(clamp_lambda(lambda), path.sigma_sq(), x, y))
}

/// `log rho~_k(y) - log rho~_{k-1}(y)` with the target term cancelled.
///
/// Only the `y`-dependent Gaussian exponents enter; the normalizing
/// constants are shared by every particle of a cloud and drop out under
/// self-normalization.
pub fn incremental_logweight(path: &DiffusionPath, k: usize, x_prev: &[f64], x_new: &[f64], y: &[f64]) -> Result<f64> {
    if k == 0 {
        return Err(Error::OutOfRange(0.0));
    }
    Ok(log_factor_at_step(path, k, x_new, y)? - log_factor_at_step(path, k - 1, x_prev, y)?)
}

/// Tempered accumulator increment and score-weight correction given a
/// cached `log pi~(y)`.
#[allow(clippy::too_many_arguments)]
pub fn tempered_logweight_cached(
    path: &DiffusionPath,
    k: usize,
    x_prev: &[f64],
    x_new: &[f64],
    y: &[f64],
    log_pi: f64,
    beta_prev: f64,
    beta_k: f64,
) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::OutOfRange(0.0));
    }
    let g_new = log_factor_at_step(path, k, x_new, y)?;
    let g_prev = log_factor_at_step(path, k - 1, x_prev, y)?;
    let increment = beta_k * g_new - beta_prev * g_prev + (beta_k - beta_prev) * log_pi;
    let correction = (1.0 - beta_k) * (g_new + log_pi);
    Ok((increment, correction))
}

/// `beta_k log rho~_k(x_new, y) - beta_prev log rho~_{k-1}(x_prev, y)` and
/// `(1 - beta_k) log rho~_k(x_new, y)`.
pub fn tempered_logweight(
    path: &DiffusionPath,
    k: usize,
    x_prev: &[f64],
    x_new: &[f64],
    y: &[f64],
    beta_prev: f64,
    beta_k: f64,
) -> Result<(f64, f64)> {
    let log_pi = path.target().log_density(y);
    tempered_logweight_cached(path, k, x_prev, x_new, y, log_pi, beta_prev, beta_k)
}

/// Auxiliary particles attached to one sample.
///
/// Positions and cached target gradients are stored row-major,
/// `n_particles x dim`.
#[derive(Clone, Debug)]
pub struct ParticleCloud {
    pub owner: usize,
    pub dim: usize,
    pub positions: Vec<f64>,
    pub log_accum: Vec<f64>,
    /// `log pi~` at each position.
    pub log_pi: Vec<f64>,
    /// `grad log pi` at each position.
    pub grad_log_pi: Vec<f64>,
    pub step_size: f64,
    pub halted: bool,
}

impl ParticleCloud {
    /// Builds a cloud from positions, evaluating the target at each one.
    pub fn new(owner: usize, dim: usize, positions: Vec<f64>, target: &dyn Target, step_size: f64) -> Self {
        let n = positions.len() / dim;
        let mut log_pi = vec![0.0; n];
        let mut grad_log_pi = vec![0.0; n * dim];
        for j in 0..n {
            log_pi[j] = target.log_density_and_grad(&positions[j * dim..(j + 1) * dim], &mut grad_log_pi[j * dim..(j + 1) * dim]);
        }
        Self {
            owner,
            dim,
            positions,
            log_accum: vec![0.0; n],
            log_pi,
            grad_log_pi,
            step_size,
            halted: false,
        }
    }

    pub fn len(&self) -> usize {
        self.log_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_accum.is_empty()
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    pub fn grad(&self, j: usize) -> &[f64] {
        &self.grad_log_pi[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        normalize_log_weights(&self.log_accum)
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.log_accum)
    }

    /// Replaces particles by `indices` (positions and caches) and zeroes the
    /// accumulators.
    pub fn reindex(&mut self, indices: &[usize]) {
        let d = self.dim;
        let mut pos = Vec::with_capacity(self.positions.len());
        let mut grad = Vec::with_capacity(self.grad_log_pi.len());
        let mut lp = Vec::with_capacity(indices.len());
        for &i in indices {
            pos.extend_from_slice(&self.positions[i * d..(i + 1) * d]);
            grad.extend_from_slice(&self.grad_log_pi[i * d..(i + 1) * d]);
            lp.push(self.log_pi[i]);
        }
        self.positions = pos;
        self.grad_log_pi = grad;
        self.log_pi = lp;
        self.log_accum.iter_mut().for_each(|a| *a = 0.0);
    }

    /// Stratified resampling when ESS drops below `threshold * N`.
    /// Returns whether resampling happened.
    pub fn resample_if_needed(&mut self, threshold: f64, rng: &mut dyn RngCore) -> Result<bool> {
        let w = self.weights()?;
        if ess_of_normalized(&w) >= threshold * self.len() as f64 {
            return Ok(false);
        }
        let idx = stratified_from_weights(&w, rng);
        self.reindex(&idx);
        Ok(true)
    }
}
