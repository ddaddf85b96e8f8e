use std::path::{Path, PathBuf};

use dpsmc::metrics::{predictive_loglik, score_mse_experiment, sinkhorn_w2, sliced_ks};
use dpsmc::rng::{Purpose, RngStream};
use dpsmc::samplers::{run_with_target, RunConfig};
use dpsmc::targets::{sample_exact, BuiltTarget, DatasetFormat, RingsDensity, TargetSpec};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::output::{self, fmt_f64, Manifest, MetricRow};
use crate::spec::{self, EvalParams, ExperimentSpec, Grid, Metric, ScoreMseSpec};

const DEFAULT_OUT: &str = "out";

/// `--out`, then the config's `out_dir`, then `DPSMC_OUT_DIR`, then `out`.
pub fn resolve_out(flag: Option<PathBuf>, from_config: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| from_config.cloned())
        .or_else(|| std::env::var_os("DPSMC_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// What samples are compared against.
pub enum Reference {
    Samples(Vec<f64>, usize),
    Target(BuiltTarget),
}

pub struct Evaluated {
    pub value: f64,
    pub param: f64,
    pub n_reference: usize,
    pub converged: bool,
}

pub fn evaluate(metric: Metric, samples: &[f64], dim: usize, reference: &Reference, params: &EvalParams) -> CliResult<Evaluated> {
    let stream = RngStream::new(params.seed);
    let owned;
    let (ref_samples, ref_dim) = match (metric, reference) {
        (Metric::Predloglik, Reference::Target(built)) => {
            let data = built
                .dataset
                .as_ref()
                .ok_or_else(|| CliError::validation("predloglik needs a logistic-regression target"))?;
            let value = predictive_loglik(samples, data)?;
            return Ok(Evaluated { value, param: data.test().len() as f64, n_reference: data.test().len(), converged: true });
        }
        (Metric::Predloglik, Reference::Samples(..)) => {
            return Err(CliError::validation("predloglik needs --target, not --ref"));
        }
        (_, Reference::Samples(s, d)) => (s.as_slice(), *d),
        (_, Reference::Target(built)) => {
            let mut rng = stream.substream(Purpose::Exact, u64::MAX, 0);
            owned = sample_exact(built.target.as_ref(), params.n_reference, &mut rng)?;
            (owned.as_slice(), built.target.dim())
        }
    };
    if ref_dim != dim {
        return Err(CliError::validation(format!("samples have dimension {dim}, reference has {ref_dim}")));
    }
    let n_reference = ref_samples.len() / dim;
    match metric {
        Metric::Sinkhorn => {
            let r = sinkhorn_w2(samples, ref_samples, dim, params.epsilon, params.max_iter)?;
            if !r.converged {
                eprintln!("warning: sinkhorn hit its iteration cap (marginal error {:.3e})", r.marginal_error);
            }
            Ok(Evaluated { value: r.value, param: params.epsilon, n_reference, converged: r.converged })
        }
        Metric::Ks => {
            let mut rng = stream.substream(Purpose::Projection, 0, 0);
            let value = sliced_ks(samples, ref_samples, dim, params.n_proj, &mut rng)?;
            Ok(Evaluated { value, param: params.n_proj as f64, n_reference, converged: true })
        }
        Metric::Predloglik => unreachable!(),
    }
}

fn run_metrics(config: &RunConfig, built: &BuiltTarget, samples: &[f64], dim: usize, metrics: &[Metric], params: &EvalParams) -> CliResult<Vec<MetricRow>> {
    let reference = Reference::Target(built.clone());
    let hash = spec::config_hash(config);
    metrics
        .iter()
        .map(|&m| {
            let e = evaluate(m, samples, dim, &reference, params)?;
            Ok(MetricRow {
                metric: m.as_str().into(),
                target: config.target.label(),
                algorithm: config.algorithm.as_str().into(),
                seed: config.seed,
                value: e.value,
                param: e.param,
                n_samples: samples.len() / dim,
                n_reference: e.n_reference,
                converged: e.converged,
                config_hash: hash.clone(),
            })
        })
        .collect()
}

/// Runs one configuration into `dir`, evaluating `metrics` afterwards.
fn execute(config: &RunConfig, dir: &Path, metrics: &[Metric], params: &EvalParams) -> CliResult<(Manifest, Vec<MetricRow>)> {
    config.validate()?;
    let built = config.target.build()?;
    let result = run_with_target(config, built.target.clone())?;
    let split = built.dataset.as_ref().map(|d| d.sidecar());
    let manifest = output::write_run(dir, config, &result, split)?;
    let rows = run_metrics(config, &built, &result.samples, result.dim, metrics, params)?;
    if !rows.is_empty() {
        output::append_metrics(&dir.join(output::METRICS_FILE), &rows)?;
    }
    Ok((manifest, rows))
}

pub fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let spec: ExperimentSpec = spec::read_json(config)?;
    spec.run.validate()?;
    let out = resolve_out(out, spec.out_dir.as_ref());
    for s in spec.seeds(seed) {
        let mut cfg = spec.run.clone();
        cfg.seed = s;
        let dir = output::run_dir(&out, &cfg);
        let (manifest, rows) = execute(&cfg, &dir, &spec.metrics, &spec.evaluation)?;
        output::print_line(&format!(
            "{} seed={} batched_evals={} halt_step={} secs={:.2}",
            dir.display(),
            s,
            manifest.batched_evals,
            manifest.halt_step.map_or("none".into(), |k| k.to_string()),
            manifest.wall_clock_secs
        ));
        for r in rows {
            output::print_line(&format!("  {}={}", r.metric, r.value));
        }
    }
    Ok(())
}

/// Resolves `--target`: a benchmark name, a manifest, a target JSON file or
/// inline target JSON.
pub fn resolve_target(arg: &str) -> CliResult<TargetSpec> {
    let named = match arg {
        "gmm40" => Some(TargetSpec::Gmm40 { dim: 2, seed: 0 }),
        "rings" => Some(TargetSpec::Rings { density: RingsDensity::default() }),
        "funnel" => Some(TargetSpec::Funnel { eta_sq: 3.0 }),
        "ionosphere" => Some(TargetSpec::Logreg {
            path: PathBuf::from("data/ionosphere.data"),
            format: DatasetFormat::Ionosphere,
            split_seed: 0,
        }),
        _ => None,
    };
    if let Some(t) = named {
        return Ok(t);
    }
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| CliError::validation(format!("unknown target `{arg}`: {e}")))?
    };
    if let Ok(m) = spec::parse_json::<Manifest>(&text) {
        return Ok(m.config.target);
    }
    spec::parse_json(&text)
}

pub struct EvalArgs {
    pub metric: Metric,
    pub samples: PathBuf,
    pub reference: Option<PathBuf>,
    pub target: Option<String>,
    pub params: EvalParams,
    pub report: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let (samples, dim) = output::read_samples(&args.samples)?;
    let (reference, target_label) = match (&args.reference, &args.target) {
        (Some(path), None) => {
            let (r, d) = output::read_samples(path)?;
            (Reference::Samples(r, d), path.display().to_string())
        }
        (None, Some(t)) => {
            let spec = resolve_target(t)?;
            (Reference::Target(spec.build()?), spec.label())
        }
        _ => return Err(CliError::validation("exactly one of --ref and --target is required")),
    };
    let e = evaluate(args.metric, &samples, dim, &reference, &args.params)?;
    // Samples written by `run` sit next to their manifest.
    let manifest = args
        .samples
        .parent()
        .map(|p| p.join(output::MANIFEST_FILE))
        .filter(|p| p.is_file())
        .and_then(|p| Manifest::read(&p).ok());
    let row = MetricRow {
        metric: args.metric.as_str().into(),
        target: target_label,
        algorithm: manifest.as_ref().map_or_else(|| "-".into(), |m| m.algorithm.clone()),
        seed: manifest.as_ref().map_or(args.params.seed, |m| m.seed),
        value: e.value,
        param: e.param,
        n_samples: samples.len() / dim,
        n_reference: e.n_reference,
        converged: e.converged,
        config_hash: manifest.map_or_else(|| "-".into(), |m| m.config_hash),
    };
    let report = args.report.unwrap_or_else(|| resolve_out(None, None).join(output::METRICS_FILE));
    output::append_metrics(&report, std::slice::from_ref(&row))?;
    output::print_line(&format!("{},{},{}", row.metric, row.target, fmt_f64(row.value)));
    Ok(())
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn sweep(config: &Path, grid: &Path, jobs: Option<usize>, out: Option<PathBuf>) -> CliResult<()> {
    let spec: ExperimentSpec = spec::read_json(config)?;
    let grid: Grid = spec::read_json(grid)?;
    let cells = spec::expand_grid(&grid)?;
    let configs = cells.iter().map(|c| spec::apply_cell(&spec.run, c)).collect::<CliResult<Vec<_>>>()?;
    let seeds = spec.seeds(None);
    let root = resolve_out(out, spec.out_dir.as_ref()).join(format!("sweep_{}", spec::config_hash(&(&spec, &grid))));

    let tasks: Vec<(usize, RunConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| seeds.iter().map(move |&s| (i, RunConfig { seed: s, ..c.clone() })))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(CliError::runtime)?;
    let results: Vec<CliResult<(usize, Vec<MetricRow>)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(i, cfg)| {
                let dir = root.join(format!("cell{i:03}_seed{}", cfg.seed));
                execute(cfg, &dir, &spec.metrics, &spec.evaluation).map(|(_, rows)| (*i, rows))
            })
            .collect()
    });
    let results = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let all_rows: Vec<MetricRow> = results.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    if !all_rows.is_empty() {
        let path = root.join(output::METRICS_FILE);
        let _ = std::fs::remove_file(&path);
        output::append_metrics(&path, &all_rows)?;
    }
    let mut summary = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let params: serde_json::Map<String, serde_json::Value> = cell.iter().cloned().collect();
        let params = serde_json::Value::Object(params).to_string();
        for m in &spec.metrics {
            let values: Vec<f64> = results
                .iter()
                .filter(|(c, _)| *c == i)
                .flat_map(|(_, rows)| rows.iter().filter(|r| r.metric == m.as_str()).map(|r| r.value))
                .collect();
            let (mean, se) = mean_se(&values);
            summary.push(vec![i.to_string(), params.clone(), m.as_str().into(), fmt_f64(mean), fmt_f64(se), values.len().to_string()]);
        }
    }
    let summary_path = root.join("summary.csv");
    output::write_csv(&summary_path, &["cell", "params", "metric", "mean", "se", "n"], summary)?;
    output::print_line(&format!("{} runs, {} cells -> {}", tasks.len(), cells.len(), root.display()));
    Ok(())
}

pub fn score_mse(config: &Path, out: &Path) -> CliResult<()> {
    let spec: ScoreMseSpec = spec::read_json(config)?;
    let target = spec.target.build()?;
    let rows = score_mse_experiment(target.as_ref(), &spec.experiment)?;
    let n = rows.len();
    output::write_csv(
        out,
        &["t", "lambda", "estimator", "mse", "se", "max_bias_z"],
        rows.into_iter().map(|r| vec![fmt_f64(r.t), fmt_f64(r.lambda), r.estimator, fmt_f64(r.mse), fmt_f64(r.se), fmt_f64(r.max_bias_z)]),
    )?;
    output::print_line(&format!("{n} rows -> {}", out.display()));
    Ok(())
}

pub fn replay(manifest_path: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let manifest = Manifest::read(manifest_path)?;
    let out = resolve_out(out, None).join("replay");
    let dir = output::run_dir(&out, &manifest.config);
    let (replayed, _) = execute(&manifest.config, &dir, &[], &EvalParams::default())?;
    if replayed.samples_sha256 != manifest.samples_sha256 {
        return Err(CliError::runtime(format!(
            "replay diverged: samples hash {} != recorded {}",
            replayed.samples_sha256, manifest.samples_sha256
        )));
    }
    output::print_line(&format!("{} reproduced bitwise ({})", dir.display(), replayed.samples_sha256));
    Ok(())
}
