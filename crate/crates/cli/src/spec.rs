use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dpsmc::metrics::{ConjugateSpec, ScoreMseConfig, DEFAULT_EPSILON, DEFAULT_PROJECTIONS, EVAL_SEED};
use dpsmc::samplers::RunConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sinkhorn,
    Ks,
    Predloglik,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Sinkhorn => "sinkhorn",
            Metric::Ks => "ks",
            Metric::Predloglik => "predloglik",
        }
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_n_proj() -> usize {
    DEFAULT_PROJECTIONS
}
fn default_n_reference() -> usize {
    10_000
}
fn default_max_iter() -> usize {
    5_000
}
fn default_eval_seed() -> u64 {
    EVAL_SEED
}

/// Metric settings shared by `run`, `sweep` and `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_n_proj")]
    pub n_proj: usize,
    /// Exact reference draws when comparing against a target.
    #[serde(default = "default_n_reference")]
    pub n_reference: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Seeds the reference draws and the KS projections.
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            n_proj: default_n_proj(),
            n_reference: default_n_reference(),
            max_iter: default_max_iter(),
            seed: default_eval_seed(),
        }
    }
}

/// Contents of a `run`/`sweep` config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub run: RunConfig,
    /// Seeds to repeat the run with; `run.seed` alone when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub evaluation: EvalParams,
    /// Output directory, overridden by `--out`.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn seeds(&self, seed_override: Option<u64>) -> Vec<u64> {
        match seed_override {
            Some(s) => vec![s],
            None if self.seeds.is_empty() => vec![self.run.seed],
            None => self.seeds.clone(),
        }
    }
}

/// Contents of a `score-mse` config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreMseSpec {
    pub target: ConjugateSpec,
    pub experiment: ScoreMseConfig,
}

/// One sweep axis: explicit values, or `points` values evenly spaced from
/// `from` to `to`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridAxis {
    Values(Vec<serde_json::Value>),
    Range { from: f64, to: f64, points: usize },
}

impl GridAxis {
    pub fn values(&self) -> Vec<serde_json::Value> {
        match self {
            GridAxis::Values(v) => v.clone(),
            GridAxis::Range { from, to, points } => (0..*points)
                .map(|i| {
                    let u = if *points == 1 { 0.0 } else { i as f64 / (*points - 1) as f64 };
                    serde_json::json!(from * (1.0 - u) + to * u)
                })
                .collect(),
        }
    }
}

/// Sweep grid: run-config field name (or `xi_log2`) to axis values.
pub type Grid = BTreeMap<String, GridAxis>;

/// Reads and parses a JSON file, reporting the failing field path.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    parse_json(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::validation(format!("at `{path}`: {}", e.into_inner()))
    })
}

/// Hex SHA-256 of the canonical (key-sorted, compact) JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    // serde_json maps are ordered by key, so the value form is canonical.
    let canonical = serde_json::to_value(value).expect("configs serialize").to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Cross product of the grid axes, in key order with the last key varying
/// fastest. Each cell is the list of `(key, value)` assignments.
pub fn expand_grid(grid: &Grid) -> CliResult<Vec<Vec<(String, serde_json::Value)>>> {
    if grid.is_empty() {
        return Err(CliError::validation("sweep grid has no axes"));
    }
    let mut cells: Vec<Vec<(String, serde_json::Value)>> = vec![vec![]];
    for (key, axis) in grid {
        let values = axis.values();
        if values.is_empty() {
            return Err(CliError::validation(format!("sweep axis `{key}` is empty")));
        }
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

/// Applies grid assignments to a run config; `xi_log2 = v` sets `xi = 2^v`.
pub fn apply_cell(base: &RunConfig, cell: &[(String, serde_json::Value)]) -> CliResult<RunConfig> {
    let mut value = serde_json::to_value(base).expect("configs serialize");
    let map = value.as_object_mut().expect("run config is an object");
    for (key, v) in cell {
        if key == "xi_log2" {
            let e = v.as_f64().ok_or_else(|| CliError::validation("xi_log2 values must be numbers"))?;
            map.insert("xi".into(), serde_json::json!(2f64.powf(e)));
            map.remove("horizon");
        } else {
            map.insert(key.clone(), v.clone());
        }
    }
    let config: RunConfig = parse_json(&value.to_string())?;
    config.validate()?;
    Ok(config)
}
