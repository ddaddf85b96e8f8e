use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fill_standard_normal, ExactSampler, Target, LN_2PI};
use crate::error::{invalid, Result};

const GMM40_COMPONENTS: usize = 40;
const GMM40_HALF_WIDTH: f64 = 20.0;

/// Mixture of Gaussians with diagonal covariances.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    name: String,
    dim: usize,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    /// `k x dim`, row-major.
    means: Vec<f64>,
    /// `k x dim` per-coordinate variances.
    variances: Vec<f64>,
    /// Normalizing constant of each component, `-0.5 * sum(ln(2 pi var))`.
    log_norms: Vec<f64>,
    radius: Option<f64>,
    tau: Option<f64>,
}

impl GaussianMixture {
    /// General constructor; `weights` need not be normalized.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(invalid("components", "weights, means and variances must have equal nonzero length"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if means.iter().chain(&variances).any(|v| v.len() != dim) {
            return Err(invalid("components", "inconsistent component dimensions"));
        }
        if variances.iter().flatten().any(|v| !(*v > 0.0)) {
            return Err(invalid("variances", "must be positive"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(invalid("weights", "must be nonnegative with positive sum"));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_norms = variances
            .iter()
            .map(|v| -0.5 * v.iter().map(|s| LN_2PI + s.ln()).sum::<f64>())
            .collect();
        Ok(Self {
            name: "gaussian_mixture".into(),
            dim,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            means: means.concat(),
            variances: variances.concat(),
            log_norms,
            radius: None,
            tau: None,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the component mean closest to `x` in Euclidean distance.
    pub fn nearest_mean(&self, x: &[f64]) -> usize {
        (0..self.n_components())
            .map(|k| {
                let d: f64 = self.mean(k).iter().zip(x).map(|(m, v)| (m - v) * (m - v)).sum();
                (k, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .unwrap_or(0)
    }

    fn component_log_term(&self, k: usize, x: &[f64]) -> f64 {
        let m = self.mean(k);
        let v = self.variance(k);
        let mut q = 0.0;
        for i in 0..self.dim {
            let r = x[i] - m[i];
            q += r * r / v[i];
        }
        self.log_weights[k] + self.log_norms[k] - 0.5 * q
    }
}

/// Equal-weight 40-component mixture with identity covariances and means
/// drawn uniformly from `[-20, 20]^dim`.
pub fn make_gmm40(dim: usize, seed: u64) -> Result<GaussianMixture> {
    if dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..GMM40_COMPONENTS)
        .map(|_| {
            (0..dim)
                .map(|_| rng.random_range(-GMM40_HALF_WIDTH..GMM40_HALF_WIDTH))
                .collect()
        })
        .collect();
    let mut centroid = vec![0.0; dim];
    for m in &means {
        for (c, v) in centroid.iter_mut().zip(m) {
            *c += v / GMM40_COMPONENTS as f64;
        }
    }
    let spread = means
        .iter()
        .map(|m| {
            m.iter()
                .zip(&centroid)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    let mut gmm = GaussianMixture::new(
        vec![1.0; GMM40_COMPONENTS],
        means,
        vec![vec![1.0; dim]; GMM40_COMPONENTS],
    )?;
    gmm.name = "gmm40".into();
    gmm.radius = Some(spread / (dim as f64).sqrt());
    gmm.tau = Some(1.0);
    Ok(gmm)
}

impl Target for GaussianMixture {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for k in 0..self.n_components() {
            let t = self.component_log_term(k, x);
            if t > max {
                sum = sum * (max - t).exp() + 1.0;
                max = t;
            } else {
                sum += (t - max).exp();
            }
        }
        max + sum.ln()
    }

    fn grad_log_density(&self, x: &[f64], grad: &mut [f64]) {
        self.log_density_and_grad(x, grad);
    }

    // Streaming log-sum-exp; `grad` accumulates responsibility-weighted
    // component scores under the running maximum.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        grad.fill(0.0);
        for k in 0..self.n_components() {
            let t = self.component_log_term(k, x);
            let m = self.mean(k);
            let v = self.variance(k);
            let e = if t > max {
                let scale = (max - t).exp();
                sum *= scale;
                for g in grad.iter_mut() {
                    *g *= scale;
                }
                max = t;
                1.0
            } else {
                (t - max).exp()
            };
            if e == 0.0 {
                continue;
            }
            sum += e;
            for i in 0..self.dim {
                grad[i] -= e * (x[i] - m[i]) / v[i];
            }
        }
        for g in grad.iter_mut() {
            *g /= sum;
        }
        max + sum.ln()
    }

    fn second_moment(&self) -> f64 {
        (0..self.n_components())
            .map(|k| {
                let m2: f64 = self
                    .mean(k)
                    .iter()
                    .zip(self.variance(k))
                    .map(|(m, v)| m * m + v)
                    .sum();
                self.weights[k] * m2
            })
            .sum()
    }

    fn compact_radius(&self) -> Option<f64> {
        self.radius
    }

    fn gaussian_tau(&self) -> Option<f64> {
        self.tau
    }

    fn exact_sampler(&self) -> Option<&dyn ExactSampler> {
        Some(self)
    }
}

impl ExactSampler for GaussianMixture {
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.n_components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        fill_standard_normal(rng, out);
        let m = self.mean(k);
        let v = self.variance(k);
        for i in 0..self.dim {
            out[i] = m[i] + v[i].sqrt() * out[i];
        }
    }
}
