//! Acceptance criteria 1-10. Runs as a plain binary so every criterion
//! prints its verdict line even when the run passes. Pass criterion numbers
//! as arguments to run a subset: `cargo test --test acceptance -- 3 9`.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use dpsmc::estimation::{cv_diag, cv_matrix, cv_scalar, CvKind};
use dpsmc::metrics::{
    anisotropic_bimodal, predictive_loglik, score_mse_experiment, sinkhorn_w2, sliced_ks, ScoreMseConfig, ScoreMseRow,
    DEFAULT_EPSILON, DEFAULT_PROJECTIONS, EVAL_SEED,
};
use dpsmc::path::{action_bound, select_t, sigma_from_target, CvSchedule, DiffusionPath, FnSchedule, LambdaSchedule, Schedule};
use dpsmc::rng::{Purpose, RngStream};
use dpsmc::samplers::{Algorithm, RunConfig, RunResult};
use dpsmc::smc::{incremental_logweight, stratified_from_weights};
use dpsmc::targets::{make_gaussian, make_gmm40, sample_exact, DatasetFormat, RingsDensity, Target, TargetSpec};
use nalgebra::DMatrix;
use rand::{Rng, RngCore};

/// Outcome of one criterion: pass flag and a one-line summary.
type Verdict = (bool, String);

const N_REFERENCE: usize = 10_000;
const SINKHORN_MAX_ITER: usize = 5_000;

fn reference(target: &dyn Target, n: usize) -> Vec<f64> {
    let mut rng = RngStream::new(EVAL_SEED).substream(Purpose::Exact, u64::MAX, 0);
    sample_exact(target, n, &mut rng).unwrap()
}

fn ks_vs(samples: &[f64], reference: &[f64], dim: usize) -> f64 {
    let mut rng = RngStream::new(EVAL_SEED).substream(Purpose::Projection, 0, 0);
    sliced_ks(samples, reference, dim, DEFAULT_PROJECTIONS, &mut rng).unwrap()
}

fn w2_vs(samples: &[f64], reference: &[f64], dim: usize) -> f64 {
    let r = sinkhorn_w2(samples, reference, dim, DEFAULT_EPSILON, SINKHORN_MAX_ITER).unwrap();
    assert!(r.converged, "sinkhorn did not converge: {r:?}");
    r.value
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

fn rel_eq_3sf(got: f64, want: f64) -> bool {
    // Three significant figures: agree after rounding to 3 s.f.
    let scale = 10f64.powf(want.abs().log10().floor() - 2.0);
    (got / scale).round() == (want / scale).round()
}

fn criterion_1() -> Verdict {
    let t_gmm = select_t(2f64.powf(3.5), 1024, 268.98, 2).unwrap();
    let t_funnel = select_t(2f64.powf(-0.1), 1024, 43.34, 10).unwrap();
    let sigmas: Vec<(f64, f64)> = [(268.98, 2, 11.60), (6840.25, 50, 11.70), (7.5225, 2, 1.94), (43.34, 10, 2.08)]
        .iter()
        .map(|&(m2, d, want)| (sigma_from_target(m2, d).unwrap().sqrt(), want))
        .collect();
    let sig_ok = sigmas.iter().all(|(got, want)| (got * 100.0).round() == (want * 100.0_f64).round());
    let ok = rel_eq_3sf(t_gmm, 584.25) && rel_eq_3sf(t_funnel, 15.33) && sig_ok;
    let sig: Vec<String> = sigmas.iter().map(|(g, _)| format!("{g:.2}")).collect();
    (ok, format!("T_gmm40={t_gmm:.2} (584.25), T_funnel={t_funnel:.2} (15.33), sigma=[{}] ([11.60, 11.70, 1.94, 2.08])", sig.join(", ")))
}

fn criterion_2() -> Verdict {
    const N: usize = 4000;
    let m2 = 7.5225;
    let exact = m2 * PI * PI / 4.0;
    let cosine = action_bound(&Schedule::Cosine, m2, m2, N).unwrap();
    let rel = (cosine - exact).abs() / exact;

    let cos = |t: f64| (0.5 * PI * t).sin().powi(2);
    let warp = |b: f64| move |t: f64| cos(t + b * (2.0 * PI * t).sin() / (2.0 * PI));
    let smooth = |t: f64| 3.0 * t * t - 2.0 * t * t * t;
    let perturbed: Vec<(&str, Box<dyn LambdaSchedule>)> = vec![
        ("warp-0.5", Box::new(FnSchedule(warp(-0.5)))),
        ("warp+0.3", Box::new(FnSchedule(warp(0.3)))),
        ("warp+0.7", Box::new(FnSchedule(warp(0.7)))),
        ("mix-smoothstep", Box::new(FnSchedule(move |t: f64| 0.5 * cos(t) + 0.5 * smooth(t)))),
        ("mix-square", Box::new(FnSchedule(move |t: f64| 0.7 * cos(t) + 0.3 * t * t))),
    ];
    // Linear lambda = t has infinite action; it is compared truncated to
    // [eps, 1 - eps], i.e. restricted to the interior of the path.
    let trunc = |eps: f64| move |t: f64| t.clamp(eps, 1.0 - eps);
    let linear: Vec<(&str, Box<dyn LambdaSchedule>)> = vec![
        ("linear", Box::new(Schedule::Linear)),
        ("trunc-1e-3", Box::new(FnSchedule(trunc(1e-3)))),
        ("trunc-1e-4", Box::new(FnSchedule(trunc(1e-4)))),
        ("trunc-1e-6", Box::new(FnSchedule(trunc(1e-6)))),
    ];
    let mut worst = f64::INFINITY;
    let mut ok = rel < 1e-3;
    for (name, s) in perturbed.iter().chain(&linear) {
        let grid: Vec<f64> = (0..=200).map(|i| s.lambda(i as f64 / 200.0)).collect();
        assert!(grid.windows(2).all(|w| w[1] >= w[0]), "{name} is not monotone");
        for n in [100, 1000, N] {
            let a = action_bound(s.as_ref(), m2, m2, n).unwrap();
            worst = worst.min(a / cosine);
            ok &= cosine <= a;
        }
    }
    (ok, format!("cosine action {cosine:.6} vs M2 pi^2/4 = {exact:.6} (rel {rel:.1e}); min ratio of 9 alternatives to cosine over 100/1000/4000-point grids {worst:.4}"))
}

fn criterion_3() -> Verdict {
    let mut rng = RngStream::new(3).substream(Purpose::Experiment, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(1..8usize);
        let sigma_sq: f64 = rng.random_range(0.1..20.0);
        let lambda: f64 = rng.random_range(0.001..0.999);
        // Equal score variances: tr(I_pi) = d / sigma^2.
        worst = worst.max((cv_scalar(d as f64 / sigma_sq, lambda, sigma_sq, d) - (1.0 - lambda)).abs());
        // Isotropic I_pi = I / sigma^2.
        let iso = DMatrix::<f64>::identity(d, d) / sigma_sq;
        let a = cv_matrix(&iso, lambda, sigma_sq).schedule.to_matrix(d);
        worst = worst.max((a - DMatrix::<f64>::identity(d, d) * (1.0 - lambda)).amax());
        // Diagonal I_pi: matrix == diag; isotropic c I: diag == scalar.
        let diag: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..50.0)).collect();
        let a = cv_matrix(&DMatrix::from_diagonal(&diag.clone().into()), lambda, sigma_sq).schedule.to_matrix(d);
        let b = CvSchedule::diagonal(cv_diag(&diag, lambda, sigma_sq)).to_matrix(d);
        worst = worst.max((a - b).amax());
        let c: f64 = rng.random_range(0.01..50.0);
        let s = cv_scalar(c * d as f64, lambda, sigma_sq, d);
        worst = worst.max(cv_diag(&vec![c; d], lambda, sigma_sq).iter().map(|v| (v - s).abs()).fold(0.0, f64::max));
        let m = cv_matrix(&(DMatrix::<f64>::identity(d, d) * c), lambda, sigma_sq).schedule.to_matrix(d);
        worst = worst.max((m - DMatrix::<f64>::identity(d, d) * s).amax());
    }
    (worst <= 1e-12, format!("max deviation over 200 random cases {worst:.2e} (tol 1e-12)"))
}

fn score_rows(target: &dyn dpsmc::metrics::ConjugateTarget, t_grid: Vec<f64>, n_x: usize, n_y: usize, estimators: Vec<CvKind>) -> Vec<ScoreMseRow> {
    let config = ScoreMseConfig { t_grid, n_x, n_y, estimators, schedule: Schedule::Cosine, sigma_sq: None, seed: 4 };
    score_mse_experiment(target, &config).unwrap()
}

fn criterion_4() -> Verdict {
    let target = make_gaussian(vec![1.0, -0.5], 0.5).unwrap();
    let estimators = vec![CvKind::Dsi, CvKind::Tsi, CvKind::Msi, CvKind::Scalar, CvKind::Matrix];
    let times = vec![0.1, 0.5, 0.9];

    let rows = score_rows(&target, times.clone(), 4000, 64, estimators.clone());
    let max_z = rows.iter().map(|r| r.max_bias_z).fold(0.0, f64::max);
    let unbiased = max_z <= 3.0;

    let n_ys = [16usize, 64, 256, 1024];
    let per_ny: Vec<Vec<ScoreMseRow>> = n_ys.iter().map(|&n| score_rows(&target, times.clone(), 1000, n, estimators.clone())).collect();
    let lx: Vec<f64> = n_ys.iter().map(|&n| (n as f64).ln()).collect();
    // On a Gaussian target the optimal control variate cancels the
    // y-dependence of the score test function exactly, so SCV/MCV have zero
    // variance and their MSE is driven by the estimated I_pi alone, which
    // decays faster than 1/N_Y. The -1 slope is checked on the estimators
    // with non-degenerate variance; SCV/MCV must decay at least as fast.
    let (mut fixed, mut learned) = (Vec::new(), Vec::new());
    for i in 0..rows.len() {
        let ly: Vec<f64> = per_ny.iter().map(|r| r[i].mse.ln()).collect();
        let (mx, my) = (lx.iter().sum::<f64>() / 4.0, ly.iter().sum::<f64>() / 4.0);
        let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
        match rows[i].estimator.as_str() {
            "SCV" | "MCV" => learned.push(cov / var),
            _ => fixed.push(cov / var),
        }
    }
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| (l.min(*s), h.max(*s)));
    let (lo, hi) = range(&fixed);
    let (llo, lhi) = range(&learned);
    let ok = unbiased && lo >= -1.15 && hi <= -0.85 && lhi <= -0.85;
    (ok, format!("max |bias|/SE {max_z:.2} (<= 3) over 5 estimators x 3 times; DSI/TSI/MSI MSE slopes in [{lo:.3}, {hi:.3}] (-1 +/- 0.15); SCV/MCV slopes in [{llo:.3}, {lhi:.3}] (<= -0.85, zero-variance limit)"))
}

fn criterion_5() -> Verdict {
    let target = anisotropic_bimodal();
    let grid: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
    let est = vec![CvKind::Dsi, CvKind::Tsi, CvKind::Scalar, CvKind::Matrix];
    let rows = score_rows(&target, grid.clone(), 2000, 64, est);
    let mut worst: f64 = 0.0;
    for chunk in rows.chunks_exact(4) {
        let envelope = chunk[0].mse.min(chunk[1].mse);
        worst = worst.max(chunk[2].mse / envelope).max(chunk[3].mse / envelope);
    }
    (worst <= 1.1, format!("max over 20 times of MSE_{{SCV,MCV}} / min(MSE_DSI, MSE_TSI) = {worst:.3} (<= 1.1)"))
}

fn dpsmc_config(spec: TargetSpec, n_samples: usize, n_particles: usize, steps: usize, xi: Option<f64>, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(spec, n_samples);
    c.n_particles = n_particles;
    c.steps = steps;
    c.xi = xi;
    c.seed = seed;
    c
}

fn criterion_6() -> Verdict {
    let m = vec![2.0, -1.0];
    let spec = TargetSpec::Gaussian { mean: m.clone(), variance: 1.0 };
    let r = dpsmc_config(spec.clone(), 1024, 64, 512, None, 0).run().unwrap();
    let mean = r.mean();
    let dev = mean.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let target = spec.build().unwrap().target;
    let ks = ks_vs(&r.samples, &reference(target.as_ref(), N_REFERENCE), 2);
    (dev <= 0.2 && ks <= 0.1, format!("mean ({:.3}, {:.3}) vs (2, -1), max dev {dev:.3} (<= 0.2); sliced KS {ks:.4} (<= 0.1)", mean[0], mean[1]))
}

fn desk_run(spec: &TargetSpec, xi_log2: f64, seed: u64) -> RunResult {
    dpsmc_config(spec.clone(), 1024, 128, 1024, Some(2f64.powf(xi_log2)), seed).run().unwrap()
}

fn criterion_7() -> Verdict {
    // GMM40: W2 averaged over ten seeds, mode coverage per seed.
    let gmm_spec = TargetSpec::Gmm40 { dim: 2, seed: 0 };
    let gmm = make_gmm40(2, 0).unwrap();
    let gmm_ref = reference(&gmm, N_REFERENCE);
    let mut w2s = Vec::new();
    let mut covered = 0;
    for seed in 0..10 {
        let r = desk_run(&gmm_spec, 3.5, seed);
        let mut hits = vec![0usize; gmm.n_components()];
        for x in r.samples.chunks_exact(2) {
            let nearest = (0..gmm.n_components())
                .min_by(|&a, &b| dist_sq(x, gmm.mean(a)).total_cmp(&dist_sq(x, gmm.mean(b))))
                .unwrap();
            hits[nearest] += 1;
        }
        let modes = hits.iter().filter(|&&h| h > 0).count();
        covered += usize::from(modes == gmm.n_components());
        w2s.push(w2_vs(&r.samples, &gmm_ref, 2));
        eprintln!("  gmm40 seed {seed}: W2 {:.4}, modes {modes}/40, halt {:?}", w2s[seed as usize], r.halt_step);
    }
    let (w2, w2_se) = mean_se(&w2s);

    let funnel_spec = TargetSpec::Funnel { eta_sq: 3.0 };
    let funnel = funnel_spec.build().unwrap().target;
    let r = desk_run(&funnel_spec, -0.1, 0);
    let ks = ks_vs(&r.samples, &reference(funnel.as_ref(), N_REFERENCE), 10);

    let rings_spec = TargetSpec::Rings { density: RingsDensity::default() };
    let rings = rings_spec.build().unwrap().target;
    let rings_ref = reference(rings.as_ref(), N_REFERENCE);
    let r = desk_run(&rings_spec, -2.5, 0);
    let rings_w2 = w2_vs(&r.samples, &rings_ref, 2);
    // Same-size exact draws give the finite-sample floor of the metric.
    let mut rng = RngStream::new(1).substream(Purpose::Exact, 0, 0);
    let floor = w2_vs(&sample_exact(rings.as_ref(), 1024, &mut rng).unwrap(), &rings_ref, 2);

    let ok = w2 <= 3.0 && covered >= 8 && ks <= 0.12 && rings_w2 <= 0.35;
    (
        ok,
        format!(
            "GMM40 W2 {w2:.3} +/- {w2_se:.3} (<= 3.0), all modes in {covered}/10 seeds (>= 8); Funnel KS {ks:.4} (<= 0.12); \
             Rings W2 {rings_w2:.4} (<= 0.35, exact-sample floor {floor:.4})"
        ),
    )
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Samples per run for criterion 8. Both samplers get the same number of
/// target-gradient evaluations: `N K N_Y` for DPSMC and `N K 128` for SMC.
const LOGREG_N: usize = 64;

fn criterion_8() -> Verdict {
    let spec = TargetSpec::Logreg {
        path: concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ionosphere.data").into(),
        format: DatasetFormat::Ionosphere,
        split_seed: 0,
    };
    let data = spec.build().unwrap().dataset.unwrap();
    let mut pll = Vec::new();
    let mut evals = Vec::new();
    for algorithm in [Algorithm::Dpsmc, Algorithm::SmcGeometric] {
        let mut c = dpsmc_config(spec.clone(), LOGREG_N, 128, 1024, Some(2f64.powf(-2.5)), 0);
        c.algorithm = algorithm;
        let r = c.run().unwrap();
        pll.push(predictive_loglik(&r.samples, &data).unwrap());
        evals.push(r.total_evals);
    }
    let gap = pll[0] - pll[1];
    (
        gap >= -1.0,
        format!(
            "Ionosphere test log-lik DPSMC {:.3} vs SMC {:.3}, gap {gap:+.3} (>= -1.0); total evals {} vs {}",
            pll[0], pll[1], evals[0], evals[1]
        ),
    )
}

fn criterion_9() -> Verdict {
    // Tempered at beta = 1 against the plain run.
    let spec = TargetSpec::Gmm40 { dim: 2, seed: 0 };
    let plain = dpsmc_config(spec.clone(), 64, 16, 64, Some(2f64.powf(3.5)), 9);
    let mut tempered = plain.clone();
    tempered.algorithm = Algorithm::DpsmcTempered;
    tempered.beta_floor = 1.0;
    let (a, b) = (plain.run().unwrap(), tempered.run().unwrap());
    let bits = |r: &RunResult| r.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let bitwise = bits(&a) == bits(&b) && a.halt_step == b.halt_step;

    // Incremental weight against posterior log-density differences.
    let target: Arc<dyn Target> = Arc::new(make_gmm40(2, 0).unwrap());
    let path = DiffusionPath::for_target(target.clone(), 1.0, 100, Schedule::Cosine).unwrap();
    let mut rng = RngStream::new(9).substream(Purpose::Experiment, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(1..100usize);
        let mut v = || (0..2).map(|_| rng.random_range(-60.0..60.0)).collect::<Vec<f64>>();
        let (xp, xn, y) = (v(), v(), v());
        let got = incremental_logweight(&path, k, &xp, &xn, &y).unwrap();
        let t = |k: usize| k as f64 / 100.0;
        let want = path.posterior_log_density(t(k), &xn, &y).unwrap() - path.posterior_log_density(t(k - 1), &xp, &y).unwrap();
        let scale = 1.0 + target.log_density(&y).abs();
        worst = worst.max((got - want).abs() / scale);
    }

    // Stratified resampling offspring counts average to N w.
    let n = 50;
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>().powi(3)).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let reps = 10_000;
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for r in 0..reps {
        let mut rr = RngStream::new(10).substream(Purpose::Resample, r, 0);
        let mut counts = vec![0.0; n];
        for i in stratified_from_weights(&w, &mut rr as &mut dyn RngCore) {
            counts[i] += 1.0;
        }
        for i in 0..n {
            sum[i] += counts[i];
            sum_sq[i] += counts[i] * counts[i];
        }
    }
    let mut max_z: f64 = 0.0;
    for i in 0..n {
        let mean = sum[i] / reps as f64;
        let var = (sum_sq[i] / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt();
        let dev = (mean - n as f64 * w[i]).abs();
        max_z = max_z.max(if se > 0.0 { dev / se } else if dev < 1e-12 { 0.0 } else { f64::INFINITY });
    }
    let ok = bitwise && worst <= 1e-10 && max_z <= 3.0;
    (
        ok,
        format!("tempered(beta=1) bitwise identical: {bitwise}; incremental weight max scaled error {worst:.1e} (<= 1e-10); resampling max |bias|/SE {max_z:.2} (<= 3)"),
    )
}

fn criterion_10() -> Verdict {
    let spec = TargetSpec::Gaussian { mean: vec![0.5, -0.5], variance: 1.0 };
    let (n, ny, k) = (16u64, 8u64, 1024u64);
    let r = dpsmc_config(spec.clone(), n as usize, ny as usize, k as usize, None, 0).run().unwrap();
    let (want_batched, want_total) = match r.halt_step {
        None => (k, k * n * ny),
        Some(h) => (k + 1, (1 + h as u64) * n * ny + (k - h as u64) * n),
    };
    let dpsmc_ok = r.batched_evals == want_batched && r.total_evals == want_total;
    let mut line = format!("DPSMC batched {} (closed form {want_batched})", r.batched_evals);
    let mut ok = dpsmc_ok;
    for algorithm in [Algorithm::Ais, Algorithm::SmcGeometric] {
        let mut c = dpsmc_config(spec.clone(), n as usize, 1, k as usize, None, 0);
        c.algorithm = algorithm;
        let r = c.run().unwrap();
        let want = 1 + k * 128;
        ok &= r.batched_evals == want && r.total_evals == want * n;
        line.push_str(&format!("; {} batched {} (closed form {want})", algorithm.as_str(), r.batched_evals));
    }
    (ok, line)
}

fn main() {
    let criteria: [(usize, &str, fn() -> Verdict); 10] = [
        (1, "constants reproduction", criterion_1),
        (2, "action bound", criterion_2),
        (3, "control-variate closed forms", criterion_3),
        (4, "score-estimator oracle equivalence", criterion_4),
        (5, "control variates under the DSI/TSI envelope", criterion_5),
        (6, "Gaussian end-to-end", criterion_6),
        (7, "desk-scale benchmarks", criterion_7),
        (8, "logistic regression", criterion_8),
        (9, "algorithmic identities", criterion_9),
        (10, "budget accounting", criterion_10),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = outcome.unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failures += usize::from(!ok);
        println!("criterion {id:>2} [{}] {name}: {detail} ({secs:.1}s)", if ok { "PASS" } else { "FAIL" });
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
