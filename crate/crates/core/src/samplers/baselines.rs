use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::{RunConfig, RunResult, StepDiagnostics, Stopwatch};
use crate::error::{Error, Result};
use crate::rng::{Prng, Purpose, RngStream};
use crate::smc::{adapt_step, ess_of_normalized, log_normalizer, mala_log_accept, mala_propose, normalize_log_weights, stratified_from_weights};
use crate::targets::{fill_standard_normal, Target, LN_2PI};

/// Annealed importance sampling on the geometric path
/// `rho_0^(1 - beta) pi^beta`, `rho_0 = N(0, sigma~^2 I)`, `beta_k = k / K`.
pub fn run_ais(config: &RunConfig, target: Arc<dyn Target>) -> Result<RunResult> {
    run(config, target, false)
}

/// [`run_ais`] with stratified resampling whenever the ESS drops below the
/// threshold, and a final resampling to equally weighted samples.
pub fn run_smc_geometric(config: &RunConfig, target: Arc<dyn Target>) -> Result<RunResult> {
    run(config, target, true)
}

struct Walker {
    x: Vec<f64>,
    log_pi: f64,
    grad_pi: Vec<f64>,
    rng: Option<Prng>,
    accepted: bool,
}

struct Reference {
    var: f64,
    log_norm: f64,
}

impl Reference {
    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * x.iter().map(|v| v * v).sum::<f64>() / self.var
    }
}

fn run(config: &RunConfig, target: Arc<dyn Target>, resample: bool) -> Result<RunResult> {
    config.validate()?;
    let clock = Stopwatch::start();
    let d = target.dim();
    let (n, steps, m) = (config.n_samples, config.steps, config.mala_steps());
    let var = config.proposal_variance(target.as_ref());
    let reference = Reference {
        var,
        log_norm: -0.5 * d as f64 * (LN_2PI + var.ln()),
    };
    let streams = RngStream::new(config.seed);
    let mut h = config.mala_init_step.unwrap_or(0.01 * var);

    let mut walkers: Vec<Walker> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut x = vec![0.0; d];
            fill_standard_normal(&mut streams.substream(Purpose::InitSample, i as u64, 0), &mut x);
            let s = var.sqrt();
            x.iter_mut().for_each(|v| *v *= s);
            let mut grad_pi = vec![0.0; d];
            let log_pi = target.log_density_and_grad(&x, &mut grad_pi);
            Walker {
                x,
                log_pi,
                grad_pi,
                rng: None,
                accepted: false,
            }
        })
        .collect();

    let mut log_w = vec![0.0; n];
    let mut log_z = 0.0;
    let mut diagnostics = Vec::with_capacity(steps);
    let ln_n = (n as f64).ln();

    for k in 1..=steps {
        let beta_prev = (k - 1) as f64 / steps as f64;
        let beta = k as f64 / steps as f64;
        for (lw, w) in log_w.iter_mut().zip(&walkers) {
            *lw += (beta - beta_prev) * (w.log_pi - reference.log_density(&w.x));
        }
        if log_w.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite {
                step: k,
                what: "importance weight".into(),
            });
        }
        let weights = normalize_log_weights(&log_w).map_err(|_| Error::NonFinite {
            step: k,
            what: "all importance weights vanished".into(),
        })?;
        let ess = ess_of_normalized(&weights);
        let mut resamples = 0;
        if resample && ess < config.resample_threshold * n as f64 {
            log_z += log_normalizer(&log_w) - ln_n;
            let mut rng = streams.substream(Purpose::Resample, 0, k as u64);
            let idx = stratified_from_weights(&weights, &mut rng);
            walkers = idx
                .iter()
                .map(|&j| Walker {
                    x: walkers[j].x.clone(),
                    log_pi: walkers[j].log_pi,
                    grad_pi: walkers[j].grad_pi.clone(),
                    rng: None,
                    accepted: false,
                })
                .collect();
            log_w.iter_mut().for_each(|v| *v = 0.0);
            resamples = 1;
        }

        walkers
            .iter_mut()
            .enumerate()
            .for_each(|(i, w)| w.rng = Some(streams.substream(Purpose::Mala, i as u64, k as u64)));
        let mut acc_total = 0usize;
        let h_used = h;
        for _ in 0..m {
            walkers.par_iter_mut().for_each(|w| mala_move(target.as_ref(), &reference, beta, h, w));
            let acc = walkers.iter().filter(|w| w.accepted).count();
            acc_total += acc;
            h = adapt_step(h, acc as f64 / n as f64, config.target_acceptance, config.adapt_factor);
        }
        diagnostics.push(StepDiagnostics {
            step: k,
            lambda: beta,
            ess_min: ess,
            ess_median: ess,
            acc_rate: if m > 0 {
                acc_total as f64 / (n * m) as f64
            } else {
                f64::NAN
            },
            h_mala: h_used,
            resamples,
            alpha_trace: f64::NAN,
        });
    }

    let final_log_w = log_w.clone();
    log_z += log_normalizer(&log_w) - ln_n;
    let samples: Vec<f64> = if resample {
        let weights = normalize_log_weights(&log_w)?;
        let mut rng = streams.substream(Purpose::Resample, 0, steps as u64 + 1);
        stratified_from_weights(&weights, &mut rng)
            .into_iter()
            .flat_map(|j| walkers[j].x.iter().copied())
            .collect()
    } else {
        walkers.iter().flat_map(|w| w.x.iter().copied()).collect()
    };
    let batched = 1 + (steps * m) as u64;
    Ok(RunResult {
        algorithm: config.algorithm,
        dim: d,
        samples,
        diagnostics,
        batched_evals: batched,
        total_evals: batched * n as u64,
        halt_step: None,
        log_weights: Some(final_log_w),
        log_normalizer: Some(log_z),
        cv_fallbacks: 0,
        excluded_particles: 0,
        wall_clock_secs: clock.secs(),
    })
}

/// One MALA step targeting `(1 - beta) log rho_0 + beta log pi`.
fn mala_move(target: &dyn Target, reference: &Reference, beta: f64, h: f64, w: &mut Walker) {
    let d = w.x.len();
    let rng = w.rng.as_mut().expect("walker stream");
    let mix_grad = |x: &[f64], gpi: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(gpi)
            .map(|(xi, gi)| -(1.0 - beta) * xi / reference.var + beta * gi)
            .collect()
    };
    let log_mix = |x: &[f64], lp: f64| (1.0 - beta) * reference.log_density(x) + beta * lp;
    let grad = mix_grad(&w.x, &w.grad_pi);
    let mut prop = vec![0.0; d];
    mala_propose(&w.x, &grad, h, 1.0, rng, &mut prop);
    let u: f64 = rng.random();
    let mut gprop = vec![0.0; d];
    let lp = target.log_density_and_grad(&prop, &mut gprop);
    w.accepted = false;
    if !lp.is_finite() || gprop.iter().any(|g| !g.is_finite()) {
        return;
    }
    let gmix = mix_grad(&prop, &gprop);
    let log_alpha = mala_log_accept(&w.x, log_mix(&w.x, w.log_pi), &grad, &prop, log_mix(&prop, lp), &gmix, h, 1.0);
    if u.ln() < log_alpha {
        w.x = prop;
        w.log_pi = lp;
        w.grad_pi = gprop;
        w.accepted = true;
    }
}
