use std::sync::Arc;

use super::{dataset::LabeledDataset, Target, LN_2PI};
use crate::error::{Error, Result};

const INTERCEPT_PRIOR_VAR: f64 = 2.5 * 2.5;

/// Posterior of a Bayesian logistic regression with prior
/// `w ~ N(0, I)`, `b ~ N(0, 2.5^2)`, over the train split of a dataset.
/// Parameters are laid out as `(w_1, .., w_d, b)`.
#[derive(Clone, Debug)]
pub struct LogisticRegression {
    data: Arc<LabeledDataset>,
}

pub fn make_logreg(data: Arc<LabeledDataset>) -> Result<LogisticRegression> {
    if data.n_rows() == 0 || data.n_features() == 0 {
        return Err(crate::error::invalid("data", "dataset must be nonempty"));
    }
    Ok(LogisticRegression { data })
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticRegression {
    pub fn dataset(&self) -> &LabeledDataset {
        &self.data
    }

    /// Checked linear predictor `w . x + b`.
    pub fn logit(&self, params: &[f64], row: &[f64]) -> Result<f64> {
        if params.len() != row.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: row.len() + 1,
                got: params.len(),
            });
        }
        Ok(logit(params, row))
    }
}

#[inline]
pub(crate) fn logit(params: &[f64], row: &[f64]) -> f64 {
    let d = row.len();
    params[..d].iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + params[d]
}

impl Target for LogisticRegression {
    fn name(&self) -> &str {
        "logreg"
    }

    fn dim(&self) -> usize {
        self.data.n_features() + 1
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let d = self.data.n_features();
        let mut ll = 0.0;
        for &i in self.data.train() {
            let z = logit(theta, self.data.row(i));
            ll += f64::from(self.data.label(i)) * z - softplus(z);
        }
        let w_sq: f64 = theta[..d].iter().map(|w| w * w).sum();
        let b = theta[d];
        ll - 0.5 * w_sq
            - 0.5 * b * b / INTERCEPT_PRIOR_VAR
            - 0.5 * (d as f64) * LN_2PI
            - 0.5 * (LN_2PI + INTERCEPT_PRIOR_VAR.ln())
    }

    fn grad_log_density(&self, theta: &[f64], grad: &mut [f64]) {
        self.log_density_and_grad(theta, grad);
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.data.n_features();
        grad.fill(0.0);
        let mut ll = 0.0;
        for &i in self.data.train() {
            let x = self.data.row(i);
            let z = logit(theta, x);
            let y = f64::from(self.data.label(i));
            ll += y * z - softplus(z);
            let r = y - sigmoid(z);
            for (g, v) in grad[..d].iter_mut().zip(x) {
                *g += r * v;
            }
            grad[d] += r;
        }
        for (g, w) in grad[..d].iter_mut().zip(&theta[..d]) {
            *g -= w;
        }
        let b = theta[d];
        grad[d] -= b / INTERCEPT_PRIOR_VAR;
        let w_sq: f64 = theta[..d].iter().map(|w| w * w).sum();
        ll - 0.5 * w_sq
            - 0.5 * b * b / INTERCEPT_PRIOR_VAR
            - 0.5 * (d as f64) * LN_2PI
            - 0.5 * (LN_2PI + INTERCEPT_PRIOR_VAR.ln())
    }

    /// Taken from the prior: `dim + 2.5^2`, with `dim` counting the intercept.
    fn second_moment(&self) -> f64 {
        self.dim() as f64 + INTERCEPT_PRIOR_VAR
    }

    fn compact_radius(&self) -> Option<f64> {
        Some(2.5 / ((self.dim() + 1) as f64).sqrt())
    }

    fn gaussian_tau(&self) -> Option<f64> {
        Some(0.0)
    }
}
