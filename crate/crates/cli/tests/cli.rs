use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dpsmc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpsmc"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DPSMC_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const GAUSS: &str = r#"{"run": {"target": {"kind": "gaussian", "mean": [1.0, -1.0], "variance": 1.0},
    "n_samples": 32, "n_particles": 8, "steps": 16, "seed": 7}}"#;

fn run_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("gaussian2_dpsmc_seed{seed}"))
}

#[test]
fn run_writes_three_files_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", GAUSS);
    for out in ["a", "b"] {
        ok(&dpsmc(&["run", "--config", cfg.to_str().unwrap(), "--out", out], tmp.path()));
    }
    let a = run_dir(&tmp.path().join("a"), 7);
    for f in ["samples.csv", "diagnostics.csv", "manifest.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let samples = fs::read_to_string(a.join("samples.csv")).unwrap();
    let lines: Vec<&str> = samples.lines().collect();
    assert_eq!(lines[0], "x0,x1");
    assert_eq!(lines.len(), 33);
    assert_eq!(samples, fs::read_to_string(run_dir(&tmp.path().join("b"), 7).join("samples.csv")).unwrap());

    let diag = fs::read_to_string(a.join("diagnostics.csv")).unwrap();
    assert!(diag.starts_with("step,ess_min,ess_median,acc_rate,h_mala,resamples,alpha_trace"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    // A halted run pays one extra round for the target-score substitution.
    let halted = !manifest["halt_step"].is_null() as u64;
    assert_eq!(manifest["batched_evals"].as_u64().unwrap(), 16 + halted);
    assert_eq!(manifest["config"]["steps"], 16);
}

#[test]
fn seed_override_and_env_out_dir() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", GAUSS);
    let out = Command::new(env!("CARGO_BIN_EXE_dpsmc"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--seed", "3"])
        .current_dir(tmp.path())
        .env("DPSMC_OUT_DIR", "envout")
        .output()
        .unwrap();
    ok(&out);
    assert!(run_dir(&tmp.path().join("envout"), 3).join("samples.csv").is_file());
}

#[test]
fn validation_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &GAUSS.replace("\"steps\": 16", "\"steps\": 0"));
    let out = dpsmc(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("steps"));

    let cfg = write(tmp.path(), "typo.json", &GAUSS.replace("\"steps\"", "\"stpes\""));
    let out = dpsmc(&["run", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stpes"));

    assert_eq!(dpsmc(&["run"], tmp.path()).status.code(), Some(1));
    assert_eq!(dpsmc(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(dpsmc(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn eval_ks_and_sinkhorn_on_identical_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", GAUSS);
    ok(&dpsmc(&["run", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path()));
    let s = run_dir(&tmp.path().join("o"), 7).join("samples.csv");
    let s = s.to_str().unwrap();

    let out = dpsmc(&["eval", "--metric", "ks", "--samples", s, "--ref", s, "--report", "m.csv"], tmp.path());
    ok(&out);
    let line = String::from_utf8_lossy(&out.stdout);
    let value: f64 = line.trim().rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(value, 0.0);

    let out = dpsmc(&["eval", "--metric", "sinkhorn", "--samples", s, "--ref", s, "--report", "m.csv"], tmp.path());
    ok(&out);
    let value: f64 = String::from_utf8_lossy(&out.stdout).trim().rsplit(',').next().unwrap().parse().unwrap();
    assert!(value >= 0.0 && value < 0.5, "{value}");

    let report = fs::read_to_string(tmp.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("metric,target,algorithm,seed,value"));
    assert!(lines[1].starts_with("ks,") && lines[1].contains(",dpsmc,7,"));

    // Against the exact target given by the run's manifest.
    let m = run_dir(&tmp.path().join("o"), 7).join("manifest.json");
    let out = dpsmc(&["eval", "--metric", "ks", "--samples", s, "--target", m.to_str().unwrap(), "--n-reference", "500", "--report", "m.csv"], tmp.path());
    ok(&out);

    let out = dpsmc(&["eval", "--metric", "ks", "--samples", s, "--report", "m.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = dpsmc(&["eval", "--metric", "ks", "--samples", "missing.csv", "--ref", s], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn predloglik_on_a_logreg_run() {
    let tmp = TempDir::new().unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ionosphere.data");
    let cfg = format!(
        r#"{{"run": {{"target": {{"kind": "logreg", "path": {:?}, "format": "ionosphere"}},
            "n_samples": 16, "n_particles": 8, "steps": 16}}, "metrics": ["predloglik"]}}"#,
        data.to_str().unwrap()
    );
    let cfg = write(tmp.path(), "c.json", &cfg);
    ok(&dpsmc(&["run", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path()));
    let dir = tmp.path().join("o/logreg_ionosphere_dpsmc_seed0");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["split"]["test"].as_array().unwrap().len(), 70);

    let out = dpsmc(
        &["eval", "--metric", "predloglik", "--samples", dir.join("samples.csv").to_str().unwrap(), "--target", dir.join("manifest.json").to_str().unwrap(), "--report", "m.csv"],
        tmp.path(),
    );
    ok(&out);
    let value: f64 = String::from_utf8_lossy(&out.stdout).trim().rsplit(',').next().unwrap().parse().unwrap();
    assert!(value.is_finite() && value < 0.0, "{value}");
    assert!(fs::read_to_string(dir.join("metrics.csv")).unwrap().contains("predloglik"));
}

#[test]
fn sweep_counts_runs_and_summarizes_in_cell_order() {
    let tmp = TempDir::new().unwrap();
    let cfg = GAUSS.replace("\"seed\": 7}", "\"seed\": 7}, \"seeds\": [1, 2, 3], \"metrics\": [\"ks\"], \"evaluation\": {\"n_reference\": 200}");
    let cfg = write(tmp.path(), "c.json", &cfg);
    let grid = write(tmp.path(), "g.json", r#"{"n_particles": [4, 8], "steps": [8, 12]}"#);
    ok(&dpsmc(&["sweep", "--config", cfg.to_str().unwrap(), "--grid", grid.to_str().unwrap(), "--jobs", "2", "--out", "o"], tmp.path()));
    let root = fs::read_dir(tmp.path().join("o")).unwrap().next().unwrap().unwrap().path();
    let manifests = fs::read_dir(&root).unwrap().filter(|e| e.as_ref().unwrap().path().join("manifest.json").is_file()).count();
    assert_eq!(manifests, 12);
    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "cell,params,metric,mean,se,n");
    assert_eq!(lines.len(), 5);
    for (i, l) in lines[1..].iter().enumerate() {
        assert!(l.starts_with(&format!("{i},")), "{l}");
        assert!(l.ends_with(",3"), "{l}");
    }

    let empty = write(tmp.path(), "e.json", "{}");
    let out = dpsmc(&["sweep", "--config", cfg.to_str().unwrap(), "--grid", empty.to_str().unwrap(), "--out", "o2"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn xi_sweep_writes_eleven_manifests() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", &GAUSS.replace("\"n_samples\": 32", "\"n_samples\": 4").replace("\"steps\": 16", "\"steps\": 4"));
    let grid = write(tmp.path(), "g.json", r#"{"xi_log2": {"from": -2.5, "to": 3.5, "points": 11}}"#);
    ok(&dpsmc(&["sweep", "--config", cfg.to_str().unwrap(), "--grid", grid.to_str().unwrap(), "--out", "o"], tmp.path()));
    let root = fs::read_dir(tmp.path().join("o")).unwrap().next().unwrap().unwrap().path();
    let mut xis: Vec<f64> = fs::read_dir(&root)
        .unwrap()
        .filter_map(|e| fs::read_to_string(e.unwrap().path().join("manifest.json")).ok())
        .map(|m| serde_json::from_str::<serde_json::Value>(&m).unwrap()["config"]["xi"].as_f64().unwrap())
        .collect();
    xis.sort_by(f64::total_cmp);
    assert_eq!(xis.len(), 11);
    assert!((xis[0] - 2f64.powf(-2.5)).abs() < 1e-12 && (xis[10] - 2f64.powf(3.5)).abs() < 1e-12);
}

#[test]
fn score_mse_rows_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let grid: Vec<String> = (0..20).map(|i| format!("{}", (i as f64 + 0.5) / 20.0)).collect();
    let cfg = format!(
        r#"{{"target": {{"kind": "gaussian", "mean": [0.5, 0.5], "variance": 1.0}},
            "experiment": {{"t_grid": [{}], "n_x": 8, "n_y": 8, "estimators": ["dsi", "tsi", "msi", "scalar", "matrix"], "seed": 1}}}}"#,
        grid.join(",")
    );
    let cfg = write(tmp.path(), "c.json", &cfg);
    for f in ["a.csv", "b.csv"] {
        ok(&dpsmc(&["score-mse", "--config", cfg.to_str().unwrap(), "--out", f], tmp.path()));
    }
    let a = fs::read_to_string(tmp.path().join("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 101);
    assert!(a.starts_with("t,lambda,estimator,mse,se,max_bias_z"));
    assert_eq!(a, fs::read_to_string(tmp.path().join("b.csv")).unwrap());

    let gmm = write(
        tmp.path(),
        "g.json",
        r#"{"target": {"kind": "gmm40", "dim": 2}, "experiment": {"t_grid": [0.5], "n_x": 4, "n_y": 8}}"#,
    );
    ok(&dpsmc(&["score-mse", "--config", gmm.to_str().unwrap(), "--out", "g.csv"], tmp.path()));
    let g = fs::read_to_string(tmp.path().join("g.csv")).unwrap();
    assert!(g.contains(",MCV,") && g.contains(",SCV,"), "{g}");
}

#[test]
fn replay_reproduces_bitwise() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", GAUSS);
    ok(&dpsmc(&["run", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path()));
    let dir = run_dir(&tmp.path().join("o"), 7);
    ok(&dpsmc(&["replay", "--manifest", dir.join("manifest.json").to_str().unwrap(), "--out", "r"], tmp.path()));
    let replayed = run_dir(&tmp.path().join("r/replay"), 7).join("samples.csv");
    assert_eq!(fs::read(dir.join("samples.csv")).unwrap(), fs::read(replayed).unwrap());

    // A tampered manifest is a runtime failure.
    let path = dir.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    m["samples_sha256"] = "00".into();
    fs::write(&path, m.to_string()).unwrap();
    let out = dpsmc(&["replay", "--manifest", path.to_str().unwrap(), "--out", "r2"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        // Experiment configs carry `run`; score-MSE configs carry `experiment`.
        if v.get("run").is_some() {
            let tmp = TempDir::new().unwrap();
            // A 1-step, 2-sample override exercises schema validation cheaply.
            let mut small = v.clone();
            small["run"]["n_samples"] = 2.into();
            small["run"]["steps"] = 1.into();
            small["run"]["n_particles"] = 2.into();
            small["run"]["mala_steps"] = 1.into();
            small["metrics"] = serde_json::json!([]);
            if let Some(p) = small["run"]["target"].get_mut("path") {
                *p = root.join("..").join(p.as_str().unwrap()).to_str().unwrap().into();
            }
            let cfg = write(tmp.path(), "c.json", &small.to_string());
            ok(&dpsmc(&["run", "--config", cfg.to_str().unwrap(), "--seed", "0", "--out", "o"], tmp.path()));
        }
        if v.get("experiment").is_some() {
            let tmp = TempDir::new().unwrap();
            let mut small = v.clone();
            small["experiment"]["n_x"] = 2.into();
            small["experiment"]["n_y"] = 2.into();
            let cfg = write(tmp.path(), "c.json", &small.to_string());
            ok(&dpsmc(&["score-mse", "--config", cfg.to_str().unwrap(), "--out", "s.csv"], tmp.path()));
        }
        seen += 1;
    }
    assert!(seen >= 7);
}
