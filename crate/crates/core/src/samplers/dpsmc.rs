use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::{ald_step_in_place, median, RunConfig, RunResult, StepDiagnostics, Stopwatch};
use crate::error::{Error, Result};
use crate::estimation::{cv_schedule_for, estimate_score, estimate_score_cov, CvKind, CvPooling};
use crate::path::{add_gaussian_factor_grad, clamp_lambda, gaussian_log_factor, CvSchedule, DiffusionPath};
use crate::rng::{Purpose, RngStream};
use crate::smc::{
    adapt_step, ess_of_normalized, incremental_logweight, mala_log_accept, mala_propose, normalize_into,
    stratified_from_weights, tempered_logweight_cached, ParticleCloud,
};
use crate::targets::{fill_standard_normal, Target, LN_2PI};

/// Interacting DPSMC: annealed Langevin on the samples, with scores
/// estimated by per-sample SMC clouds over the clean-variable posterior.
pub fn run_dpsmc(config: &RunConfig, target: Arc<dyn Target>) -> Result<RunResult> {
    run(config, target, false)
}

/// DPSMC whose auxiliary clouds track `rho~^beta` with
/// `beta_k = max(lambda_k, beta_floor)`, reweighted to the untempered
/// posterior for score estimation.
pub fn run_dpsmc_tempered(config: &RunConfig, target: Arc<dyn Target>) -> Result<RunResult> {
    run(config, target, true)
}

struct SampleState {
    x: Vec<f64>,
    x_prev: Vec<f64>,
    score: Vec<f64>,
    cloud: ParticleCloud,
    /// Normalized accumulator weights (drive resampling).
    w: Vec<f64>,
    /// Weights used for score estimation; equal to `w` unless tempered.
    w_score: Vec<f64>,
    accepts: usize,
    ess: f64,
    resampled: bool,
    alpha_trace: f64,
    fell_back: bool,
}

struct StepCtx<'a> {
    target: &'a dyn Target,
    path: &'a DiffusionPath,
    streams: RngStream,
    k: usize,
    lambda: f64,
    beta: f64,
    beta_prev: f64,
    tempered: bool,
    h_mala: f64,
    mala_steps: usize,
}

fn nonfinite(step: usize, what: &str) -> Error {
    Error::NonFinite {
        step,
        what: what.into(),
    }
}

fn run(config: &RunConfig, target: Arc<dyn Target>, tempered: bool) -> Result<RunResult> {
    config.validate()?;
    let clock = Stopwatch::start();
    let path = config.path(target.clone())?;
    let d = target.dim();
    let (nx, ny, steps) = (config.n_samples, config.n_particles, config.steps);
    let sigma_sq = path.sigma_sq();
    let h = path.step_size();
    let q_var = config.proposal_variance(target.as_ref());
    let streams = RngStream::new(config.seed);
    let beta = |k: usize| {
        if tempered {
            path.lambda_at_step(k).max(config.beta_floor)
        } else {
            1.0
        }
    };
    let mut h_mala = config.mala_init_step.unwrap_or(0.01 * sigma_sq);
    let mala_steps = config.mala_steps();
    let cv_kind = if !config.interacting && config.cv.is_learned() {
        CvKind::Msi
    } else {
        config.cv
    };

    let beta0 = beta(0);
    let log_q_norm = -0.5 * d as f64 * (LN_2PI + q_var.ln());
    let mut states: Vec<SampleState> = (0..nx)
        .into_par_iter()
        .map(|i| {
            let mut x = vec![0.0; d];
            fill_standard_normal(&mut streams.substream(Purpose::InitSample, i as u64, 0), &mut x);
            let s = sigma_sq.sqrt();
            x.iter_mut().for_each(|v| *v *= s);
            let mut ys = vec![0.0; ny * d];
            fill_standard_normal(&mut streams.substream(Purpose::InitParticles, i as u64, 0), &mut ys);
            let sq = q_var.sqrt();
            ys.iter_mut().for_each(|v| *v *= sq);
            let mut cloud = ParticleCloud::new(i, d, ys, target.as_ref(), h_mala);
            for j in 0..ny {
                let y = cloud.particle(j);
                let log_q = log_q_norm - 0.5 * y.iter().map(|v| v * v).sum::<f64>() / q_var;
                cloud.log_accum[j] = beta0 * cloud.log_pi[j] - log_q;
            }
            let score = x.iter().map(|v| -v / sigma_sq).collect();
            SampleState {
                x_prev: x.clone(),
                x,
                score,
                cloud,
                w: Vec::with_capacity(ny),
                w_score: Vec::with_capacity(ny),
                accepts: 0,
                ess: ny as f64,
                resampled: false,
                alpha_trace: f64::NAN,
                fell_back: false,
            }
        })
        .collect();

    let mut batched_evals: u64 = 1;
    let mut total_evals: u64 = (nx * ny) as u64;
    let mut diagnostics = Vec::with_capacity(steps.saturating_sub(1));
    let mut halt_step = None;
    let mut cv_fallbacks = 0;
    let mut excluded_particles = 0;

    for k in 1..steps {
        let lambda = clamp_lambda(path.lambda_at_step(k));
        if halt_step.is_some() {
            states.par_iter_mut().enumerate().try_for_each(|(i, s)| {
                let mut rng = streams.substream(Purpose::Langevin, i as u64, k as u64);
                ald_step_in_place(&mut s.x, &s.score, h, &mut rng).map_err(|_| nonfinite(k, "score"))?;
                target.grad_log_density(&s.x, &mut s.score);
                check_finite(&s.x, k, "sample")
            })?;
            batched_evals += 1;
            total_evals += nx as u64;
            diagnostics.push(StepDiagnostics {
                step: k,
                lambda,
                ess_min: f64::NAN,
                ess_median: f64::NAN,
                acc_rate: f64::NAN,
                h_mala,
                resamples: 0,
                alpha_trace: f64::NAN,
            });
            continue;
        }

        let ctx = StepCtx {
            target: target.as_ref(),
            path: &path,
            streams,
            k,
            lambda,
            beta: beta(k),
            beta_prev: beta(k - 1),
            tempered,
            h_mala,
            mala_steps,
        };
        states
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, s)| propagate(&ctx, i, s))?;
        batched_evals += mala_steps as u64;
        total_evals += (nx * ny * mala_steps) as u64;
        let accepts: usize = states.iter().map(|s| s.accepts).sum();
        let acc_rate = accepts as f64 / (nx * ny * mala_steps).max(1) as f64;

        if config.interacting && acc_rate < config.halt_threshold {
            halt_step = Some(k);
            states.par_iter_mut().try_for_each(|s| {
                target.grad_log_density(&s.x, &mut s.score);
                check_finite(&s.score, k, "score")
            })?;
            batched_evals += 1;
            total_evals += nx as u64;
            diagnostics.push(StepDiagnostics {
                step: k,
                lambda,
                ess_min: f64::NAN,
                ess_median: f64::NAN,
                acc_rate,
                h_mala,
                resamples: 0,
                alpha_trace: f64::NAN,
            });
            continue;
        }

        states.par_iter_mut().try_for_each(|s| reweight(&ctx, s))?;

        let pooled = if cv_kind.is_learned() && config.cv_pooling == CvPooling::Ensemble {
            let w: Vec<Vec<f64>> = states.iter().map(|s| s.w_score.clone()).collect();
            let clouds: Vec<&ParticleCloud> = states.iter().map(|s| &s.cloud).collect();
            let xs: Vec<f64> = states.iter().flat_map(|s| s.x.iter().copied()).collect();
            let cov = estimate_score_cov(&w, &clouds, &xs, lambda, sigma_sq)?;
            excluded_particles += cov.excluded;
            let (cv, m) = cv_schedule_for(cv_kind, Some(&cov), lambda, sigma_sq, d);
            cv_fallbacks += m.is_some_and(|m| m.fell_back) as usize;
            Some(cv)
        } else if !cv_kind.is_learned() {
            Some(cv_schedule_for(cv_kind, None, lambda, sigma_sq, d).0)
        } else {
            None
        };

        let threshold = config.resample_threshold * ny as f64;
        let excluded: usize = states
            .par_iter_mut()
            .enumerate()
            .map(|(i, s)| -> Result<usize> {
                let mut excluded = 0;
                let cv = match &pooled {
                    Some(cv) => cv.clone(),
                    None => {
                        let cov = estimate_score_cov(
                            std::slice::from_ref(&s.w_score),
                            &[&s.cloud],
                            &s.x,
                            lambda,
                            sigma_sq,
                        )?;
                        excluded = cov.excluded;
                        let (cv, m) = cv_schedule_for(cv_kind, Some(&cov), lambda, sigma_sq, d);
                        s.fell_back = m.is_some_and(|m| m.fell_back);
                        cv
                    }
                };
                s.alpha_trace = alpha_trace(&cv, d);
                s.score = estimate_score(&s.x, &s.cloud, &s.w_score, lambda, sigma_sq, &cv);
                check_finite(&s.score, k, "score")?;
                s.resampled = s.ess < threshold;
                if s.resampled {
                    let mut rng = streams.substream(Purpose::Resample, i as u64, k as u64);
                    let idx = stratified_from_weights(&s.w, &mut rng);
                    s.cloud.reindex(&idx);
                }
                Ok(excluded)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum();
        excluded_particles += excluded;
        cv_fallbacks += states.iter().filter(|s| s.fell_back).count();

        let mut ess: Vec<f64> = states.iter().map(|s| s.ess).collect();
        let ess_min = ess.iter().copied().fold(f64::INFINITY, f64::min);
        diagnostics.push(StepDiagnostics {
            step: k,
            lambda,
            ess_min,
            ess_median: median(&mut ess),
            acc_rate,
            h_mala,
            resamples: states.iter().filter(|s| s.resampled).count(),
            alpha_trace: states.iter().map(|s| s.alpha_trace).sum::<f64>() / nx as f64,
        });

        if config.interacting {
            h_mala = adapt_step(h_mala, acc_rate, config.target_acceptance, config.adapt_factor);
        }
    }

    states.par_iter_mut().enumerate().try_for_each(|(i, s)| {
        let mut rng = streams.substream(Purpose::Langevin, i as u64, steps as u64);
        ald_step_in_place(&mut s.x, &s.score, h, &mut rng).map_err(|_| nonfinite(steps, "score"))?;
        check_finite(&s.x, steps, "sample")
    })?;

    Ok(RunResult {
        algorithm: config.algorithm,
        dim: d,
        samples: states.iter().flat_map(|s| s.x.iter().copied()).collect(),
        diagnostics,
        batched_evals,
        total_evals,
        halt_step,
        log_weights: None,
        log_normalizer: None,
        cv_fallbacks,
        excluded_particles,
        wall_clock_secs: clock.secs(),
    })
}

fn check_finite(v: &[f64], step: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(nonfinite(step, what))
    }
}

fn alpha_trace(cv: &CvSchedule, d: usize) -> f64 {
    match cv {
        CvSchedule::Scalar(a) => *a,
        CvSchedule::Diagonal(a) => a.iter().sum::<f64>() / d as f64,
        CvSchedule::Matrix(m) => m.trace() / d as f64,
    }
}

/// ALD move of the sample, accumulator update on the incoming particles,
/// then MALA moves of the cloud towards `rho~_k^beta`.
fn propagate(ctx: &StepCtx<'_>, i: usize, s: &mut SampleState) -> Result<()> {
    let (k, d) = (ctx.k, s.x.len());
    let mut rng = ctx.streams.substream(Purpose::Langevin, i as u64, k as u64);
    s.x_prev.copy_from_slice(&s.x);
    ald_step_in_place(&mut s.x, &s.score, ctx.path.step_size(), &mut rng).map_err(|_| nonfinite(k, "score"))?;
    check_finite(&s.x, k, "sample")?;

    let cloud = &mut s.cloud;
    for j in 0..cloud.len() {
        let y = &cloud.positions[j * d..(j + 1) * d];
        let inc = if ctx.tempered {
            tempered_logweight_cached(ctx.path, k, &s.x_prev, &s.x, y, cloud.log_pi[j], ctx.beta_prev, ctx.beta)?.0
        } else {
            incremental_logweight(ctx.path, k, &s.x_prev, &s.x, y)?
        };
        cloud.log_accum[j] += inc;
    }

    let sigma_sq = ctx.path.sigma_sq();
    let mut rng = ctx.streams.substream(Purpose::Mala, i as u64, k as u64);
    let mut grad = vec![0.0; d];
    let mut prop = vec![0.0; d];
    let mut gprop = vec![0.0; d];
    let mut gprop_full = vec![0.0; d];
    s.accepts = 0;
    for _ in 0..ctx.mala_steps {
        for j in 0..cloud.len() {
            let range = j * d..(j + 1) * d;
            let y = &cloud.positions[range.clone()];
            grad.copy_from_slice(&cloud.grad_log_pi[range.clone()]);
            add_gaussian_factor_grad(ctx.lambda, sigma_sq, &s.x, y, &mut grad);
            let logp = gaussian_log_factor(ctx.lambda, sigma_sq, &s.x, y) + cloud.log_pi[j];
            mala_propose(y, &grad, ctx.h_mala, ctx.beta, &mut rng, &mut prop);
            let u: f64 = rng.random();
            let lp_pi = ctx.target.log_density_and_grad(&prop, &mut gprop);
            if !lp_pi.is_finite() || gprop.iter().any(|g| !g.is_finite()) {
                continue;
            }
            gprop_full.copy_from_slice(&gprop);
            add_gaussian_factor_grad(ctx.lambda, sigma_sq, &s.x, &prop, &mut gprop_full);
            let logp_prop = gaussian_log_factor(ctx.lambda, sigma_sq, &s.x, &prop) + lp_pi;
            let log_alpha = mala_log_accept(y, logp, &grad, &prop, logp_prop, &gprop_full, ctx.h_mala, ctx.beta);
            if u.ln() < log_alpha {
                cloud.positions[range.clone()].copy_from_slice(&prop);
                cloud.grad_log_pi[range].copy_from_slice(&gprop);
                cloud.log_pi[j] = lp_pi;
                s.accepts += 1;
            }
        }
    }
    cloud.step_size = ctx.h_mala;
    Ok(())
}

/// Normalized accumulator weights, and the corrected weights
/// `A + (1 - beta_k) log rho~_k` at the moved particles when tempered.
fn reweight(ctx: &StepCtx<'_>, s: &mut SampleState) -> Result<()> {
    let bad = |_| nonfinite(ctx.k, "all auxiliary weights vanished");
    normalize_into(&s.cloud.log_accum, &mut s.w).map_err(bad)?;
    s.ess = ess_of_normalized(&s.w);
    if ctx.tempered && ctx.beta < 1.0 {
        let d = s.x.len();
        let sigma_sq = ctx.path.sigma_sq();
        let corrected: Vec<f64> = (0..s.cloud.len())
            .map(|j| {
                let y = &s.cloud.positions[j * d..(j + 1) * d];
                let log_rho = gaussian_log_factor(ctx.lambda, sigma_sq, &s.x, y) + s.cloud.log_pi[j];
                s.cloud.log_accum[j] + (1.0 - ctx.beta) * log_rho
            })
            .collect();
        normalize_into(&corrected, &mut s.w_score).map_err(bad)?;
    } else {
        s.w_score.clone_from(&s.w);
    }
    Ok(())
}
