use crate::error::{invalid, Error, Result};
use crate::targets::{log_sum_exp, logit, softplus, LabeledDataset};

/// Summed log posterior-mean predictive probability over the test split.
///
/// `samples` is row-major with `n_features + 1` columns laid out as
/// `(w_1, .., w_d, b)`.
pub fn predictive_loglik(samples: &[f64], data: &LabeledDataset) -> Result<f64> {
    let p = data.n_features() + 1;
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if samples.len() % p != 0 {
        return Err(Error::DimensionMismatch { expected: p, got: samples.len() % p });
    }
    if data.test().is_empty() {
        return Err(invalid("data", "test split is empty"));
    }
    let n = samples.len() / p;
    let log_n = (n as f64).ln();
    let mut terms = vec![0.0; n];
    let mut total = 0.0;
    for &i in data.test() {
        let row = data.row(i);
        let positive = data.label(i) == 1;
        for (t, w) in terms.iter_mut().zip(samples.chunks_exact(p)) {
            let z = logit(w, row);
            *t = -softplus(if positive { -z } else { z });
        }
        total += (log_sum_exp(&terms) - log_n).min(0.0);
    }
    Ok(total)
}
