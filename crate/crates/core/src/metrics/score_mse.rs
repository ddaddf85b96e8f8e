use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::{cv_schedule_for, estimate_score, estimate_score_cov, CvKind};
use crate::path::{clamp_lambda, exact_path_sample, sigma_from_target, ConjugatePosterior, LambdaSchedule, Schedule};
use crate::rng::{Purpose, RngStream};
use crate::smc::ParticleCloud;
use crate::targets::{make_gaussian, make_gmm40, GaussianMixture, Target};

/// A target with closed-form path posteriors.
pub trait ConjugateTarget: Target + ConjugatePosterior {}
impl<T: Target + ConjugatePosterior> ConjugateTarget for T {}

fn all_estimators() -> Vec<CvKind> {
    vec![CvKind::Dsi, CvKind::Tsi, CvKind::Msi, CvKind::Scalar, CvKind::Diagonal, CvKind::Matrix]
}

fn default_schedule() -> Schedule {
    Schedule::Cosine
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreMseConfig {
    /// Normalized times in `(0, 1)`.
    pub t_grid: Vec<f64>,
    pub n_x: usize,
    pub n_y: usize,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<CvKind>,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Base variance; defaults to `M2 / d`.
    #[serde(default)]
    pub sigma_sq: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMseRow {
    pub t: f64,
    pub lambda: f64,
    pub estimator: String,
    /// Mean over samples of `|s_hat(x) - grad log mu_t(x)|^2`.
    pub mse: f64,
    /// Standard error of `mse`.
    pub se: f64,
    /// Largest per-coordinate `|mean error| / SE`; a bias check.
    pub max_bias_z: f64,
}

/// Declarative description of a target with closed-form path posteriors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConjugateSpec {
    Gaussian { mean: Vec<f64>, variance: f64 },
    Gmm40 {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// See [`anisotropic_bimodal`].
    AnisotropicBimodal,
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    },
}

impl ConjugateSpec {
    pub fn build(&self) -> Result<Box<dyn ConjugateTarget>> {
        Ok(match self {
            ConjugateSpec::Gaussian { mean, variance } => Box::new(make_gaussian(mean.clone(), *variance)?),
            ConjugateSpec::Gmm40 { dim, seed } => Box::new(make_gmm40(*dim, *seed)?),
            ConjugateSpec::AnisotropicBimodal => Box::new(anisotropic_bimodal()),
            ConjugateSpec::Mixture { weights, means, variances } => {
                Box::new(GaussianMixture::new(weights.clone(), means.clone(), variances.clone())?)
            }
        })
    }
}

/// Label used in tables and plots.
pub fn estimator_label(kind: CvKind) -> &'static str {
    match kind {
        CvKind::Dsi => "DSI",
        CvKind::Tsi => "TSI",
        CvKind::Msi => "MSI",
        CvKind::Scalar => "SCV",
        CvKind::Diagonal => "DCV",
        CvKind::Matrix => "MCV",
    }
}

/// The two-component anisotropic mixture used for the estimator comparison:
/// components at `(-2, 1)` and `(2, -1)`, variances `(2, 0.05)`.
pub fn anisotropic_bimodal() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![-2.0, 1.0], vec![2.0, -1.0]],
        vec![vec![2.0, 0.05], vec![2.0, 0.05]],
    )
    .expect("fixed mixture parameters are valid")
}

/// Score-estimator MSE against the closed-form marginal score.
///
/// At every `t` the same `n_x` exact path samples and `n_y` exact posterior
/// particles per sample are shared by all estimators. Learned schedules use
/// one covariance estimate pooled over all clouds.
pub fn score_mse_experiment(target: &dyn ConjugateTarget, config: &ScoreMseConfig) -> Result<Vec<ScoreMseRow>> {
    if config.n_x < 2 || config.n_y == 0 {
        return Err(invalid("n_x", "need n_x >= 2 and n_y >= 1"));
    }
    if config.estimators.is_empty() {
        return Err(invalid("estimators", "must not be empty"));
    }
    let d = target.dim();
    let sigma_sq = match config.sigma_sq {
        Some(s) if s > 0.0 => s,
        Some(_) => return Err(invalid("sigma_sq", "must be positive")),
        None => sigma_from_target(target.second_moment(), d)?.powi(2),
    };
    let sampler = target
        .exact_sampler()
        .ok_or_else(|| Error::NoExactSampler(target.name().to_string()))?;
    let streams = RngStream::new(config.seed);

    let mut rows = Vec::new();
    for (ti, &t) in config.t_grid.iter().enumerate() {
        let lambda = config.schedule.lambda(t);
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::OutOfRange(lambda));
        }
        let lambda = clamp_lambda(lambda);
        let draws: Vec<(Vec<f64>, ParticleCloud, Vec<f64>)> = (0..config.n_x)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.substream(Purpose::Experiment, i as u64, ti as u64);
                let (x, _) = exact_path_sample(lambda, sigma_sq, d, sampler, &mut rng);
                let mut ys = vec![0.0; config.n_y * d];
                for y in ys.chunks_exact_mut(d) {
                    target.sample_posterior(lambda, sigma_sq, &x, &mut rng, y);
                }
                let cloud = ParticleCloud::new(i, d, ys, target, 0.0);
                let reference = target.marginal_score(lambda, sigma_sq, &x);
                (x, cloud, reference)
            })
            .collect();
        let weights = vec![vec![1.0 / config.n_y as f64; config.n_y]; config.n_x];
        let xs: Vec<f64> = draws.iter().flat_map(|(x, _, _)| x.iter().copied()).collect();
        let clouds: Vec<&ParticleCloud> = draws.iter().map(|(_, c, _)| c).collect();
        let cov = estimate_score_cov(&weights, &clouds, &xs, lambda, sigma_sq)?;

        for &kind in &config.estimators {
            let (cv, _) = cv_schedule_for(kind, Some(&cov), lambda, sigma_sq, d);
            let errors: Vec<Vec<f64>> = draws
                .par_iter()
                .zip(&weights)
                .map(|((x, cloud, reference), w)| {
                    let s = estimate_score(x, cloud, w, lambda, sigma_sq, &cv);
                    s.iter().zip(reference).map(|(a, b)| a - b).collect()
                })
                .collect();
            rows.push(summarize(t, lambda, kind, &errors, d));
        }
    }
    Ok(rows)
}

fn summarize(t: f64, lambda: f64, kind: CvKind, errors: &[Vec<f64>], d: usize) -> ScoreMseRow {
    let n = errors.len() as f64;
    let sq: Vec<f64> = errors.iter().map(|e| e.iter().map(|v| v * v).sum()).collect();
    let mse = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mse).powi(2)).sum::<f64>() / (n - 1.0);
    let max_bias_z = (0..d)
        .map(|c| {
            let mean = errors.iter().map(|e| e[c]).sum::<f64>() / n;
            let v = errors.iter().map(|e| (e[c] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (v / n).sqrt();
            if se > 0.0 {
                mean.abs() / se
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    ScoreMseRow {
        t,
        lambda,
        estimator: estimator_label(kind).to_string(),
        mse,
        se: (var / n).sqrt(),
        max_bias_z,
    }
}
