#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn hazard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hazard"))
        .args(args)
        .env_remove("HAZ_THREADS")
        .output()
        .expect("failed to start the hazard binary")
}

pub fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

pub fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs a subcommand with a config and output directory, panicking unless
/// it exits with 0.
pub fn run_ok(command: &str, config: &Path, out_dir: &Path) {
    let out = hazard(&[command, "--config", path_str(config), "--out-dir", path_str(out_dir)]);
    assert!(
        out.status.success(),
        "{command} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A small training setup that runs in seconds.
pub fn tiny_training(seed: u64) -> Value {
    json!({ "seed": seed, "epochs": 3, "batch_size": 128, "blocks": 2, "width": 8, "metrics_every": 1 })
}

/// Simulated inputs plus a fitted model, return levels and hazard surfaces.
pub struct Pipeline {
    pub root: PathBuf,
    pub sim: PathBuf,
    pub fit: PathBuf,
    pub rl: PathBuf,
    pub hazard: PathBuf,
}

impl Pipeline {
    pub fn build(root: &Path, n_sites: usize, n_years: usize) -> Self {
        let p = Pipeline {
            root: root.to_path_buf(),
            sim: root.join("sim"),
            fit: root.join("fit"),
            rl: root.join("rl"),
            hazard: root.join("hazard"),
        };
        let sim_cfg = root.join("simulate.json");
        write_json(&sim_cfg, &json!({ "n_sites": n_sites, "n_years": n_years, "seed": 42 }));
        run_ok("simulate", &sim_cfg, &p.sim);

        let fit_cfg = root.join("fit.json");
        write_json(
            &fit_cfg,
            &json!({ "dataset": "sim/dataset.csv", "schema": "sim/schema.json", "training": tiny_training(7) }),
        );
        run_ok("fit", &fit_cfg, &p.fit);

        let rl_cfg = root.join("rl.json");
        write_json(&rl_cfg, &json!({ "precipitation": "sim/precipitation.csv", "periods": [5, 10, 15, 20] }));
        run_ok("return-levels", &rl_cfg, &p.rl);

        let hz_cfg = root.join("hazard.json");
        write_json(
            &hz_cfg,
            &json!({
                "model": "fit/model.json",
                "return_levels": "rl/return_levels.csv",
                "site_table": "sim/sites.csv",
                "thresholds_from": { "dataset": "sim/dataset.csv", "schema": "sim/schema.json" },
                "site_areas": "sim/site_areas.csv",
            }),
        );
        run_ok("hazard", &hz_cfg, &p.hazard);
        p
    }
}

/// Rows of a CSV file as header-keyed string maps.
pub fn read_rows(path: &Path) -> Vec<std::collections::BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}
