use rand::RngCore;

use crate::targets::{fill_standard_normal, Gaussian, GaussianMixture};

/// Targets whose posterior `rho_{t,x}` and marginal score are available in
/// closed form. Requires `0 <= lambda < 1`.
pub trait ConjugatePosterior {
    /// Draws one exact sample from `rho_{t,x}` into `out`.
    fn sample_posterior(&self, lambda: f64, sigma_sq: f64, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);

    /// `grad log mu_t(x)`.
    fn marginal_score(&self, lambda: f64, sigma_sq: f64, x: &[f64]) -> Vec<f64>;
}

/// Per-coordinate conjugate update: returns `(mean, variance)` of the
/// posterior of `y_i ~ N(m, s2)` given `x_i ~ N(sqrt(lambda) y_i, sigma^2 (1 - lambda))`.
#[inline]
fn conjugate_coord(lambda: f64, sigma_sq: f64, x: f64, m: f64, s2: f64) -> (f64, f64) {
    let noise = sigma_sq * (1.0 - lambda);
    let precision = lambda / noise + 1.0 / s2;
    let var = 1.0 / precision;
    ((lambda.sqrt() * x / noise + m / s2) * var, var)
}

impl ConjugatePosterior for Gaussian {
    fn sample_posterior(&self, lambda: f64, sigma_sq: f64, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        fill_standard_normal(rng, out);
        let s2 = self.variance();
        for ((o, xi), m) in out.iter_mut().zip(x).zip(self.mean()) {
            let (mu, var) = conjugate_coord(lambda, sigma_sq, *xi, *m, s2);
            *o = mu + var.sqrt() * *o;
        }
    }

    fn marginal_score(&self, lambda: f64, sigma_sq: f64, x: &[f64]) -> Vec<f64> {
        super::gaussian_marginal_score(lambda, sigma_sq, x, self.mean(), self.variance())
    }
}

impl GaussianMixture {
    /// Posterior component probabilities given `x ~ mu_t`.
    pub fn path_responsibilities(&self, lambda: f64, sigma_sq: f64, x: &[f64]) -> Vec<f64> {
        let a = lambda.sqrt();
        let mut logr: Vec<f64> = (0..self.n_components())
            .map(|k| {
                let mut acc = self.weights()[k].ln();
                for ((xi, m), s2) in x.iter().zip(self.mean(k)).zip(self.variance(k)) {
                    let v = lambda * s2 + (1.0 - lambda) * sigma_sq;
                    let r = xi - a * m;
                    acc -= 0.5 * (r * r / v + v.ln());
                }
                acc
            })
            .collect();
        let max = logr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logr.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        logr.iter_mut().for_each(|l| *l /= total);
        logr
    }
}

impl ConjugatePosterior for GaussianMixture {
    fn sample_posterior(&self, lambda: f64, sigma_sq: f64, x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        let r = self.path_responsibilities(lambda, sigma_sq, x);
        let u = rand::Rng::random::<f64>(rng);
        let mut k = r.len() - 1;
        let mut cum = 0.0;
        for (i, ri) in r.iter().enumerate() {
            cum += ri;
            if u < cum {
                k = i;
                break;
            }
        }
        fill_standard_normal(rng, out);
        for (i, o) in out.iter_mut().enumerate() {
            let (mu, var) = conjugate_coord(lambda, sigma_sq, x[i], self.mean(k)[i], self.variance(k)[i]);
            *o = mu + var.sqrt() * *o;
        }
    }

    fn marginal_score(&self, lambda: f64, sigma_sq: f64, x: &[f64]) -> Vec<f64> {
        let r = self.path_responsibilities(lambda, sigma_sq, x);
        let a = lambda.sqrt();
        let mut out = vec![0.0; x.len()];
        for (k, rk) in r.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                let v = lambda * self.variance(k)[i] + (1.0 - lambda) * sigma_sq;
                *o -= rk * (x[i] - a * self.mean(k)[i]) / v;
            }
        }
        out
    }
}
