//! Validates every input file and writes a dataset manifest, so later
//! stages start from known-good data.

use climort::io;
use serde::Serialize;

use crate::artifact::write_json;
use crate::config::Resolved;
use crate::stages::{load_calibration_data, load_scenarios, provenance_using};
use crate::Failure;

#[derive(Serialize)]
struct StratumSummary {
    gender: String,
    bucket_label: String,
    days: usize,
    total_deaths: u64,
}

#[derive(Serialize)]
struct ScenarioSummary {
    model: String,
    rcp: String,
    first_date: String,
    last_date: String,
    days: usize,
}

#[derive(Serialize)]
struct Manifest {
    calibration_first_year: i32,
    calibration_last_year: i32,
    national_days: usize,
    national_first_date: String,
    national_last_date: String,
    strata: Vec<StratumSummary>,
    annual_ages: usize,
    annual_first_year: i32,
    annual_last_year: i32,
    scenarios: Vec<ScenarioSummary>,
}

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let data = load_calibration_data(resolved)?;
    let annual_path = resolved.annual_path();
    let annual = io::load_annual_mortality(&annual_path).map_err(Failure::input)?;
    let (scenarios, scenario_paths) = load_scenarios(resolved)?;

    let manifest = Manifest {
        calibration_first_year: resolved.config.calibration_first_year,
        calibration_last_year: resolved.config.calibration_last_year,
        national_days: data.national.len(),
        national_first_date: data.national.first_date().to_string(),
        national_last_date: data.national.last_date().to_string(),
        strata: data
            .strata
            .iter()
            .map(|s| StratumSummary {
                gender: s.gender.code().to_string(),
                bucket_label: s.bucket_label.clone(),
                days: s.len(),
                total_deaths: s.deaths.iter().map(|&d| u64::from(d)).sum(),
            })
            .collect(),
        annual_ages: annual.female.ages.len(),
        annual_first_year: *annual.female.years.first().expect("non-empty grid"),
        annual_last_year: *annual.female.years.last().expect("non-empty grid"),
        scenarios: scenarios
            .iter()
            .map(|s| ScenarioSummary {
                model: s.meta.model_id(),
                rcp: s.meta.rcp.to_string(),
                first_date: s.temps.first_date().to_string(),
                last_date: s.temps.last_date().to_string(),
                days: s.temps.len(),
            })
            .collect(),
    };

    let mut inputs = data.inputs.clone();
    inputs.push(annual_path);
    inputs.extend(scenario_paths);
    let prov = provenance_using(resolved, &inputs)?;
    write_json(
        &resolved.out().join("ingest.json"),
        &prov,
        serde_json::to_value(&manifest).map_err(|e| Failure::input(anyhow::anyhow!(e)))?,
    )?;
    log::info!(
        "validated {} strata, {} annual years, {} scenarios",
        manifest.strata.len(),
        manifest.annual_last_year - manifest.annual_first_year + 1,
        manifest.scenarios.len()
    );
    Ok(())
}
