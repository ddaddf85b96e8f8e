use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dpsmc::samplers::{RunConfig, RunResult};
use dpsmc::targets::SplitSidecar;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Everything needed to replay a run and check its output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// The configuration actually run, with `seed` resolved.
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub target: String,
    pub algorithm: String,
    pub dim: usize,
    pub n_samples: usize,
    pub batched_evals: u64,
    pub total_evals: u64,
    pub halt_step: Option<usize>,
    pub cv_fallbacks: usize,
    pub excluded_particles: usize,
    pub log_normalizer: Option<f64>,
    pub wall_clock_secs: f64,
    pub samples_file: String,
    pub samples_sha256: String,
    pub diagnostics_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSidecar>,
}

impl Manifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        crate::spec::read_json(path)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn samples_csv(samples: &[f64], dim: usize) -> String {
    let mut out = (0..dim).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in samples.chunks_exact(dim) {
        out.push_str(&row.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Writes samples, diagnostics and manifest into `dir`; returns the manifest.
pub fn write_run(dir: &Path, config: &RunConfig, result: &RunResult, split: Option<SplitSidecar>) -> CliResult<Manifest> {
    create_dir(dir)?;
    let samples = samples_csv(&result.samples, result.dim);
    write_file(&dir.join(SAMPLES_FILE), samples.as_bytes())?;

    let diag_path = dir.join(DIAGNOSTICS_FILE);
    let mut w = csv::Writer::from_path(&diag_path).map_err(|e| io_err(&diag_path, e))?;
    w.write_record(["step", "ess_min", "ess_median", "acc_rate", "h_mala", "resamples", "alpha_trace"])
        .map_err(|e| io_err(&diag_path, e))?;
    for d in &result.diagnostics {
        w.write_record([
            d.step.to_string(),
            fmt_f64(d.ess_min),
            fmt_f64(d.ess_median),
            fmt_f64(d.acc_rate),
            fmt_f64(d.h_mala),
            d.resamples.to_string(),
            fmt_f64(d.alpha_trace),
        ])
        .map_err(|e| io_err(&diag_path, e))?;
    }
    w.flush().map_err(|e| io_err(&diag_path, e))?;

    let manifest = Manifest {
        config: config.clone(),
        config_hash: crate::spec::config_hash(config),
        seed: config.seed,
        target: config.target.label(),
        algorithm: config.algorithm.as_str().into(),
        dim: result.dim,
        n_samples: result.n_samples(),
        batched_evals: result.batched_evals,
        total_evals: result.total_evals,
        halt_step: result.halt_step,
        cv_fallbacks: result.cv_fallbacks,
        excluded_particles: result.excluded_particles,
        log_normalizer: result.log_normalizer,
        wall_clock_secs: result.wall_clock_secs,
        samples_file: SAMPLES_FILE.into(),
        samples_sha256: sha256_hex(samples.as_bytes()),
        diagnostics_file: DIAGNOSTICS_FILE.into(),
        split,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

/// Reads a samples CSV; returns row-major values and the dimension.
pub fn read_samples(path: &Path) -> CliResult<(Vec<f64>, usize)> {
    let bad = |msg: String| CliError::validation(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let dim = r.headers().map_err(|e| bad(e.to_string()))?.len();
    if dim == 0 {
        return Err(bad("empty header".into()));
    }
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| bad(format!("row {}: `{field}` is not a number", i + 1)))?;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(bad("no samples".into()));
    }
    Ok((values, dim))
}

/// One row of a metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub target: String,
    pub algorithm: String,
    pub seed: u64,
    pub value: f64,
    pub param: f64,
    pub n_samples: usize,
    pub n_reference: usize,
    pub converged: bool,
    pub config_hash: String,
}

impl MetricRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.metric.clone(),
            self.target.clone(),
            self.algorithm.clone(),
            self.seed.to_string(),
            fmt_f64(self.value),
            fmt_f64(self.param),
            self.n_samples.to_string(),
            self.n_reference.to_string(),
            self.converged.to_string(),
            self.config_hash.clone(),
        ]
    }
}

const METRIC_HEADER: [&str; 10] =
    ["metric", "target", "algorithm", "seed", "value", "param", "n_samples", "n_reference", "converged", "config_hash"];

/// Appends rows to a metrics CSV, writing the header if the file is new.
pub fn append_metrics(path: &Path, rows: &[MetricRow]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(METRIC_HEADER).map_err(|e| io_err(path, e))?;
    }
    for row in rows {
        w.write_record(row.record()).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
pub fn read_metrics(path: &Path) -> CliResult<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(path, e))
}

/// Writes a CSV from a header and pre-formatted records.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn print_line(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

pub fn run_dir(out: &Path, config: &RunConfig) -> PathBuf {
    out.join(format!("{}_{}_seed{}", config.target.label(), config.algorithm.as_str(), config.seed))
}
