//! Sample-quality metrics and the score-MSE experiment.

mod ks;
mod predictive;
mod score_mse;
mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use ks::{ks_two_sample, sliced_ks, DEFAULT_PROJECTIONS, EVAL_SEED};
pub use predictive::predictive_loglik;
pub use score_mse::{
    anisotropic_bimodal, estimator_label, score_mse_experiment, ConjugateSpec, ConjugateTarget, ScoreMseConfig, ScoreMseRow,
};
pub use sinkhorn::{sinkhorn_w2, SinkhornResult, DEFAULT_EPSILON};

/// One evaluated metric with enough context to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    /// Regularization, projection count or test-set size, by metric.
    pub param: f64,
    pub n_samples: usize,
    pub n_reference: usize,
    pub seed: u64,
    /// False only for a Sinkhorn run that hit its iteration cap.
    pub converged: bool,
}
