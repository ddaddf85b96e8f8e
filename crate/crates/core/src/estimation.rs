//! Control-variate schedules learned from the ensemble and weighted score
//! estimates for every sample.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::path::{add_gaussian_factor_grad, CvSchedule};
use crate::smc::ParticleCloud;

/// How the DSI/TSI weighting is chosen at each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvKind {
    Dsi,
    Tsi,
    Msi,
    Scalar,
    Diagonal,
    #[default]
    Matrix,
}

impl CvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CvKind::Dsi => "dsi",
            CvKind::Tsi => "tsi",
            CvKind::Msi => "msi",
            CvKind::Scalar => "scalar",
            CvKind::Diagonal => "diagonal",
            CvKind::Matrix => "matrix",
        }
    }

    /// Whether the schedule depends on an estimated score covariance.
    pub fn is_learned(&self) -> bool {
        matches!(self, CvKind::Scalar | CvKind::Diagonal | CvKind::Matrix)
    }
}

/// Which particles feed the score-covariance estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvPooling {
    /// One estimate from every cloud of the ensemble.
    #[default]
    Ensemble,
    /// A separate estimate per sample from its own cloud.
    PerSample,
}

/// Monte Carlo estimate of `Cov_pi[grad log pi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCovEstimate {
    pub i_pi_hat: DMatrix<f64>,
    /// Jitter used by the last matrix solve (zero when none was needed).
    pub jitter: f64,
    /// Particles skipped for non-finite gradients.
    pub excluded: usize,
}

impl ScoreCovEstimate {
    pub fn new(i_pi_hat: DMatrix<f64>) -> Self {
        Self {
            i_pi_hat,
            jitter: 0.0,
            excluded: 0,
        }
    }

    pub fn trace(&self) -> f64 {
        self.i_pi_hat.trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.i_pi_hat.diagonal().iter().copied().collect()
    }
}

/// `(1/N_X) sum_i sum_j w_ij grad log pi(Y_ij) grad log rho_{t,X_i}(Y_ij)^T`,
/// symmetrized.
///
/// `xs` holds the samples row-major and `weights[i]` the normalized weights
/// of `clouds[i]`. Uses the target gradients cached in the clouds.
pub fn estimate_score_cov(
    weights: &[Vec<f64>],
    clouds: &[&ParticleCloud],
    xs: &[f64],
    lambda: f64,
    sigma_sq: f64,
) -> Result<ScoreCovEstimate> {
    let Some(first) = clouds.first() else {
        return Err(invalid("clouds", "need at least one cloud"));
    };
    let d = first.dim;
    if weights.len() != clouds.len() || xs.len() != clouds.len() * d {
        return Err(invalid("clouds", "weights, clouds and samples disagree in length"));
    }
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut grad_rho = vec![0.0; d];
    let mut excluded = 0;
    for ((cloud, w), x) in clouds.iter().zip(weights).zip(xs.chunks_exact(d)) {
        let mut cloud_acc = DMatrix::<f64>::zeros(d, d);
        let mut mass = 0.0;
        for j in 0..cloud.len() {
            let g = cloud.grad(j);
            let y = cloud.particle(j);
            grad_rho.copy_from_slice(g);
            add_gaussian_factor_grad(lambda, sigma_sq, x, y, &mut grad_rho);
            if g.iter().chain(&grad_rho).any(|v| !v.is_finite()) {
                excluded += 1;
                continue;
            }
            let wj = w[j];
            if wj == 0.0 {
                continue;
            }
            mass += wj;
            for c in 0..d {
                let wr = wj * grad_rho[c];
                for r in 0..d {
                    cloud_acc[(r, c)] += wr * g[r];
                }
            }
        }
        if mass > 0.0 {
            acc += cloud_acc / mass;
        }
    }
    acc /= clouds.len() as f64;
    let sym = (&acc + acc.transpose()) * 0.5;
    Ok(ScoreCovEstimate {
        i_pi_hat: sym,
        jitter: 0.0,
        excluded,
    })
}

fn clip01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Optimal scalar weight
/// `(1 - lambda) tr / (lambda d / sigma^2 + (1 - lambda) tr)`.
pub fn cv_scalar(i_pi_trace: f64, lambda: f64, sigma_sq: f64, d: usize) -> f64 {
    let num = (1.0 - lambda) * i_pi_trace;
    clip01(num / (lambda * d as f64 / sigma_sq + num))
}

/// Optimal per-coordinate weights
/// `(1 - lambda) I_ii / (lambda / sigma^2 + (1 - lambda) I_ii)`.
pub fn cv_diag(i_pi_diag: &[f64], lambda: f64, sigma_sq: f64) -> Vec<f64> {
    i_pi_diag
        .iter()
        .map(|&ii| {
            let num = (1.0 - lambda) * ii;
            clip01(num / (lambda / sigma_sq + num))
        })
        .collect()
}

/// Outcome of the matrix schedule solve.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSchedule {
    pub schedule: CvSchedule,
    pub jitter: f64,
    /// The Cholesky solve failed at every jitter level and the scalar
    /// schedule was used instead.
    pub fell_back: bool,
}

const JITTER_REL: f64 = 1e-10;
const JITTER_ESCALATIONS: usize = 3;

/// `A = I (lambda / (sigma^2 (1 - lambda)) I + I)^{-1}` by Cholesky solve.
///
/// The solve is attempted without jitter first, then with
/// `1e-10 tr(I) / d` escalated tenfold up to three times, and finally falls
/// back to the scalar schedule.
pub fn cv_matrix(i_pi_hat: &DMatrix<f64>, lambda: f64, sigma_sq: f64) -> MatrixSchedule {
    let d = i_pi_hat.nrows();
    let shift = lambda / (sigma_sq * (1.0 - lambda));
    let trace = i_pi_hat.trace();
    let base_jitter = JITTER_REL * trace.abs().max(f64::MIN_POSITIVE) / d as f64;
    let levels = std::iter::once(0.0).chain((0..=JITTER_ESCALATIONS).map(|e| base_jitter * 10f64.powi(e as i32)));
    for jitter in levels {
        let mut m = i_pi_hat.clone();
        for i in 0..d {
            m[(i, i)] += shift + jitter;
        }
        if let Some(chol) = m.cholesky() {
            // M and I_pi commute, so A = I_pi M^{-1} = (M^{-1} I_pi)^T.
            let a = chol.solve(i_pi_hat).transpose();
            if a.iter().all(|v| v.is_finite()) {
                return MatrixSchedule {
                    schedule: CvSchedule::Matrix(a),
                    jitter,
                    fell_back: false,
                };
            }
        }
    }
    MatrixSchedule {
        schedule: CvSchedule::scalar(cv_scalar(trace, lambda, sigma_sq, d)),
        jitter: base_jitter * 10f64.powi(JITTER_ESCALATIONS as i32),
        fell_back: true,
    }
}

/// Schedule of the requested kind at `lambda`. Learned kinds need a
/// covariance estimate; fixed kinds ignore it.
pub fn cv_schedule_for(kind: CvKind, cov: Option<&ScoreCovEstimate>, lambda: f64, sigma_sq: f64, d: usize) -> (CvSchedule, Option<MatrixSchedule>) {
    match (kind, cov) {
        (CvKind::Dsi, _) => (CvSchedule::dsi(), None),
        (CvKind::Tsi, _) => (CvSchedule::tsi(), None),
        (CvKind::Msi, _) | (_, None) => (CvSchedule::msi(lambda), None),
        (CvKind::Scalar, Some(c)) => (CvSchedule::scalar(cv_scalar(c.trace(), lambda, sigma_sq, d)), None),
        (CvKind::Diagonal, Some(c)) => (CvSchedule::diagonal(cv_diag(&c.diagonal(), lambda, sigma_sq)), None),
        (CvKind::Matrix, Some(c)) => {
            let m = cv_matrix(&c.i_pi_hat, lambda, sigma_sq);
            (m.schedule.clone(), Some(m))
        }
    }
}

/// Weighted score estimate `sum_j w_j phi^A(x, Y_j)` for one sample.
///
/// `phi^A` is affine in `A`, so the weighted DSI and TSI means are formed
/// first and blended once.
pub fn estimate_score(
    x: &[f64],
    cloud: &ParticleCloud,
    weights: &[f64],
    lambda: f64,
    sigma_sq: f64,
    cv: &CvSchedule,
) -> Vec<f64> {
    let d = x.len();
    let a = lambda.sqrt();
    let inv = 1.0 / (sigma_sq * (1.0 - lambda));
    let mut dsi = vec![0.0; d];
    let mut tsi = vec![0.0; d];
    let mut mass = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let g = cloud.grad(j);
        if g.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let y = cloud.particle(j);
        mass += w;
        for i in 0..d {
            dsi[i] += w * (a * y[i] - x[i]) * inv;
            tsi[i] += w * g[i] / a;
        }
    }
    if mass > 0.0 && mass != 1.0 {
        dsi.iter_mut().chain(tsi.iter_mut()).for_each(|v| *v /= mass);
    }
    cv.blend(&mut dsi, &mut tsi);
    tsi
}

/// [`estimate_score`] for every sample; `xs` is row-major.
pub fn estimate_scores(
    xs: &[f64],
    clouds: &[&ParticleCloud],
    weights: &[Vec<f64>],
    lambda: f64,
    sigma_sq: f64,
    cv: &CvSchedule,
) -> Vec<Vec<f64>> {
    let d = clouds.first().map_or(1, |c| c.dim);
    clouds
        .iter()
        .zip(weights)
        .zip(xs.chunks_exact(d))
        .map(|((c, w), x)| estimate_score(x, c, w, lambda, sigma_sq, cv))
        .collect()
}
