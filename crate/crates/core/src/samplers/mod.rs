//! Outer sampling loops: DPSMC (plain and tempered) and the geometric-path
//! AIS/SMC baselines.

mod baselines;
mod dpsmc;

use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use baselines::{run_ais, run_smc_geometric};
pub use dpsmc::{run_dpsmc, run_dpsmc_tempered};

use crate::error::{invalid, Error, Result};
use crate::estimation::{CvKind, CvPooling};
use crate::path::{DiffusionPath, Schedule};
use crate::targets::{fill_standard_normal, Target, TargetSpec};

/// Which sampler a run executes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Dpsmc,
    DpsmcTempered,
    Ais,
    SmcGeometric,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Dpsmc => "dpsmc",
            Algorithm::DpsmcTempered => "dpsmc_tempered",
            Algorithm::Ais => "ais",
            Algorithm::SmcGeometric => "smc_geometric",
        }
    }

    pub fn is_baseline(&self) -> bool {
        matches!(self, Algorithm::Ais | Algorithm::SmcGeometric)
    }
}

fn default_n_particles() -> usize {
    128
}
fn default_steps() -> usize {
    1024
}
fn default_true() -> bool {
    true
}
fn default_beta_floor() -> f64 {
    0.01
}
fn default_target_acceptance() -> f64 {
    0.75
}
fn default_adapt_factor() -> f64 {
    1.1
}
fn default_halt_threshold() -> f64 {
    0.10
}
fn default_resample_threshold() -> f64 {
    0.5
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetSpec,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// `N_X`
    pub n_samples: usize,
    /// `N_Y`, auxiliary particles per sample (DPSMC only).
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    /// `K`
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Horizon multiplier; `T = xi (K M2 / d)^(1/3)`. Defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    /// Explicit horizon `T`, overriding `xi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub cv: CvKind,
    #[serde(default)]
    pub cv_pooling: CvPooling,
    /// `false` runs the non-interacting variant: fixed MALA step, fixed CV
    /// schedule, no halting.
    #[serde(default = "default_true")]
    pub interacting: bool,
    #[serde(default = "default_beta_floor")]
    pub beta_floor: f64,
    #[serde(default = "default_target_acceptance")]
    pub target_acceptance: f64,
    #[serde(default = "default_adapt_factor")]
    pub adapt_factor: f64,
    #[serde(default = "default_halt_threshold")]
    pub halt_threshold: f64,
    #[serde(default = "default_resample_threshold")]
    pub resample_threshold: f64,
    /// MALA steps per outer step; 1 for DPSMC and 128 for the baselines
    /// when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mala_steps: Option<usize>,
    /// Initial MALA step; `0.01` times the base (DPSMC) or reference
    /// (baselines) variance when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mala_init_step: Option<f64>,
    /// Variance of the isotropic Gaussian initializing auxiliary particles
    /// (DPSMC) or the reference density (baselines). Defaults to
    /// `R^2 d + tau^2` when the target declares both, else `M2 / d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_var: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// A DPSMC configuration with defaults for everything but the target
    /// and the sample count.
    pub fn new(target: TargetSpec, n_samples: usize) -> Self {
        Self {
            target,
            algorithm: Algorithm::Dpsmc,
            n_samples,
            n_particles: default_n_particles(),
            steps: default_steps(),
            xi: None,
            horizon: None,
            schedule: Schedule::Cosine,
            cv: CvKind::Matrix,
            cv_pooling: CvPooling::Ensemble,
            interacting: true,
            beta_floor: default_beta_floor(),
            target_acceptance: default_target_acceptance(),
            adapt_factor: default_adapt_factor(),
            halt_threshold: default_halt_threshold(),
            resample_threshold: default_resample_threshold(),
            mala_steps: None,
            mala_init_step: None,
            proposal_var: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(invalid("n_samples", "must be at least 1"));
        }
        if self.n_particles == 0 {
            return Err(invalid("n_particles", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if let Some(xi) = self.xi {
            if !(xi > 0.0 && xi.is_finite()) {
                return Err(invalid("xi", "must be positive"));
            }
        }
        if let Some(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("horizon", "must be positive"));
            }
        }
        if !(self.beta_floor > 0.0 && self.beta_floor <= 1.0) {
            return Err(invalid("beta_floor", "must lie in (0, 1]"));
        }
        for (field, v) in [
            ("target_acceptance", self.target_acceptance),
            ("halt_threshold", self.halt_threshold),
            ("resample_threshold", self.resample_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(field, "must lie in (0, 1)"));
            }
        }
        if !(self.adapt_factor >= 1.0 && self.adapt_factor.is_finite()) {
            return Err(invalid("adapt_factor", "must be at least 1"));
        }
        if let Some(h) = self.mala_init_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("mala_init_step", "must be positive"));
            }
        }
        if let Some(v) = self.proposal_var {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid("proposal_var", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn mala_steps(&self) -> usize {
        self.mala_steps
            .unwrap_or(if self.algorithm.is_baseline() { 128 } else { 1 })
    }

    /// The diffusion path implied by this configuration.
    pub fn path(&self, target: std::sync::Arc<dyn Target>) -> Result<DiffusionPath> {
        match self.horizon {
            Some(t) => {
                let sigma_sq = crate::path::sigma_from_target(target.second_moment(), target.dim())?;
                DiffusionPath::new(target, sigma_sq, t, self.steps, self.schedule)
            }
            None => DiffusionPath::for_target(target, self.xi.unwrap_or(1.0), self.steps, self.schedule),
        }
    }

    /// `sigma~^2` for auxiliary initialization and the baselines' reference.
    pub fn proposal_variance(&self, target: &dyn Target) -> f64 {
        if let Some(v) = self.proposal_var {
            return v;
        }
        let d = target.dim() as f64;
        match (target.compact_radius(), target.gaussian_tau()) {
            (Some(r), Some(tau)) => r * r * d + tau * tau,
            _ => target.second_moment() / d,
        }
    }

    /// Builds the target and runs the configured algorithm.
    pub fn run(&self) -> Result<RunResult> {
        self.validate()?;
        let built = self.target.build()?;
        run_with_target(self, built.target)
    }
}

/// Runs `config` against an already built target.
pub fn run_with_target(config: &RunConfig, target: std::sync::Arc<dyn Target>) -> Result<RunResult> {
    config.validate()?;
    match config.algorithm {
        Algorithm::Dpsmc => run_dpsmc(config, target),
        Algorithm::DpsmcTempered => run_dpsmc_tempered(config, target),
        Algorithm::Ais => run_ais(config, target),
        Algorithm::SmcGeometric => run_smc_geometric(config, target),
    }
}

/// Per-step diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub lambda: f64,
    pub ess_min: f64,
    pub ess_median: f64,
    pub acc_rate: f64,
    pub h_mala: f64,
    pub resamples: usize,
    /// `alpha` for scalar schedules, `tr(A) / d` otherwise.
    pub alpha_trace: f64,
}

/// Output of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub dim: usize,
    /// `N_X x dim`, row-major.
    pub samples: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Batched target evaluations, i.e. sequential rounds of evaluation
    /// calls per sample.
    pub batched_evals: u64,
    /// Individual target density+gradient evaluations over the whole run.
    pub total_evals: u64,
    pub halt_step: Option<usize>,
    /// Final importance log-weights (AIS; SMC before its last resampling).
    pub log_weights: Option<Vec<f64>>,
    pub log_normalizer: Option<f64>,
    /// Steps where the matrix schedule fell back to the scalar one.
    pub cv_fallbacks: usize,
    /// Auxiliary particles skipped for non-finite gradients.
    pub excluded_particles: usize,
    pub wall_clock_secs: f64,
}

impl RunResult {
    pub fn n_samples(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.samples.chunks_exact(self.dim) {
            for (mi, v) in m.iter_mut().zip(row) {
                *mi += v;
            }
        }
        let n = self.n_samples() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// `x + h score + sqrt(2h) xi`.
pub fn ald_step(x: &[f64], score: &[f64], h: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    ald_step_in_place(&mut out, score, h, rng)?;
    Ok(out)
}

pub(crate) fn ald_step_in_place(x: &mut [f64], score: &[f64], h: f64, rng: &mut dyn RngCore) -> Result<()> {
    if score.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            what: "score".into(),
        });
    }
    let mut noise = vec![0.0; x.len()];
    fill_standard_normal(rng, &mut noise);
    let s = (2.0 * h).sqrt();
    for ((xi, si), ni) in x.iter_mut().zip(score).zip(&noise) {
        *xi += h * si + s * ni;
    }
    Ok(())
}

pub(crate) struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
