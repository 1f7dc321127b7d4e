//! Determinism gate: rerunning any pipeline stage with the same
//! configuration and seed must reproduce its outputs byte for byte.
//!
//! The whole pipeline runs twice into the same directory through the real
//! binary; afterwards every file is compared against a snapshot taken after
//! the first pass. The test prints one `acceptance 11` line, matching the
//! numbered gates in the library crate.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const STAGES: &[&str] = &[
    "synthgen",
    "ingest",
    "fit-dlnm",
    "attribution",
    "fit-mortality",
    "forecast",
    "heatwaves",
    "report",
];

const CONFIG: &str = r#"{
  "seed": 424242,
  "out_dir": "run",
  "calibration_first_year": 2012,
  "calibration_last_year": 2017,
  "heatwave_reference": [2012, 2017],
  "forecast": {
    "horizon_years": 8,
    "n_sims": 40,
    "report_ages": [0, 65],
    "day_sets": ["all", "extreme_hot"]
  },
  "synth": {
    "calibration_first_year": 2012,
    "calibration_last_year": 2017,
    "annual_first_year": 1995,
    "scenario_last_year": 2027,
    "n_stations": 3,
    "models_per_rcp": 1
  }
}"#;

fn run_stage(workdir: &Path, config: &Path, stage: &str) {
    let output = Command::new(env!("CARGO_BIN_EXE_climort"))
        .current_dir(workdir)
        .arg("--config")
        .arg(config)
        .arg(stage)
        .output()
        .expect("binary starts");
    assert!(
        output.status.success(),
        "stage {stage} failed with {:?}:\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Every file under `root`, keyed by relative path, with full contents.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, into: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).expect("readable directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                walk(&path, root, into);
            } else {
                let key = path.strip_prefix(root).expect("under root").to_path_buf();
                into.insert(key, fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(root, root, &mut files);
    files
}

#[test]
fn c11_every_stage_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = dir.path().join("pipeline.json");
    fs::write(&config, CONFIG).expect("config written");

    for stage in STAGES {
        run_stage(dir.path(), &config, stage);
    }
    let first = snapshot(&dir.path().join("run"));
    assert!(!first.is_empty(), "first pass produced no files");

    for stage in STAGES {
        run_stage(dir.path(), &config, stage);
    }
    let second = snapshot(&dir.path().join("run"));

    let first_names: Vec<_> = first.keys().collect();
    let second_names: Vec<_> = second.keys().collect();
    assert_eq!(first_names, second_names, "rerun changed the set of outputs");
    for (name, contents) in &first {
        assert_eq!(
            contents, &second[name],
            "rerun changed the bytes of {}",
            name.display()
        );
    }
    println!(
        "acceptance 11: pass - {} files unchanged after rerunning all {} stages",
        first.len(),
        STAGES.len()
    );
}
