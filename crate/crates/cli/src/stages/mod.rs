//! The pipeline stages, each an idempotent function from the resolved
//! configuration to artifacts on disk.

pub mod attribution;
pub mod fit_dlnm;
pub mod fit_mortality;
pub mod forecast;
pub mod heatwaves;
pub mod ingest;
pub mod report;
pub mod synthgen;

use std::path::PathBuf;

use anyhow::Context;
use climort::data::{DailyStratumSeries, DailyTemperatureSeries};
use climort::dlnm::DlnmModel;
use climort::io;

use crate::artifact::{check_fresh, read_json, Provenance};
use crate::config::Resolved;
use crate::Failure;

/// National temperature series and death strata, both restricted to the
/// calibration window, plus the input paths they came from.
pub struct CalibrationData {
    pub national: DailyTemperatureSeries,
    pub strata: Vec<DailyStratumSeries>,
    pub inputs: Vec<PathBuf>,
}

pub fn load_calibration_data(resolved: &Resolved) -> Result<CalibrationData, Failure> {
    let cfg = &resolved.config;
    let scheme = cfg.scheme()?;
    let stations_path = resolved.stations_path();
    let deaths_path = resolved.deaths_path();
    let stations = io::load_station_temperatures(&stations_path).map_err(Failure::input)?;
    let national = climort::data::aggregate_stations(&stations)
        .map_err(Failure::input)?
        .restrict_years(cfg.calibration_first_year, cfg.calibration_last_year)
        .context("station data does not cover the calibration window")
        .map_err(Failure::input)?;
    let strata = io::load_daily_deaths(&deaths_path, &scheme)
        .map_err(Failure::input)?
        .into_iter()
        .map(|s| {
            s.restrict_years(cfg.calibration_first_year, cfg.calibration_last_year)
                .context("death data does not cover the calibration window")
                .map_err(Failure::input)
        })
        .collect::<Result<Vec<_>, _>>()?;
    for s in &strata {
        climort::data::check_same_axis("deaths vs temperatures", &s.dates, &national.dates)
            .map_err(Failure::input)?;
    }
    Ok(CalibrationData {
        national,
        strata,
        inputs: vec![stations_path, deaths_path],
    })
}

/// Directory of the per-stratum temperature-response fits.
pub fn dlnm_dir(resolved: &Resolved) -> PathBuf {
    resolved.out().join("dlnm")
}

pub fn fit_file_name(gender: climort::data::Gender, bucket_label: &str) -> String {
    format!("fit_{}_{}.json", gender.code(), bucket_label)
}

/// Reads the per-stratum fit files back into one model, refusing stale or
/// mutually inconsistent files.
pub fn load_fit_set(resolved: &Resolved) -> Result<(DlnmModel, Vec<PathBuf>), Failure> {
    let dir = dlnm_dir(resolved);
    let entries = std::fs::read_dir(&dir)
        .with_context(|| {
            format!(
                "cannot read fit directory {}; run fit-dlnm first",
                dir.display()
            )
        })
        .map_err(Failure::input)?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("fit_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::input(anyhow::anyhow!(
            "no fit files under {}; run fit-dlnm first",
            dir.display()
        )));
    }
    let mut merged: Option<DlnmModel> = None;
    for path in &paths {
        let (prov, payload) = read_json(path)?;
        check_fresh(path, &prov, resolved)?;
        let text = serde_json::to_string(&payload)
            .context("cannot reserialize fit payload")
            .map_err(Failure::input)?;
        let model = DlnmModel::from_json(&text)
            .with_context(|| format!("cannot parse fit file {}", path.display()))
            .map_err(Failure::input)?;
        match &mut merged {
            None => merged = Some(model),
            Some(m) => {
                if m.quantiles != model.quantiles || m.config != model.config {
                    return Err(Failure::input(anyhow::anyhow!(
                        "fit file {} disagrees with its siblings on the shared basis",
                        path.display()
                    )));
                }
                m.strata.extend(model.strata);
            }
        }
    }
    Ok((merged.expect("at least one file"), paths))
}

/// Loads the configured scenario files.
pub fn load_scenarios(
    resolved: &Resolved,
) -> Result<(Vec<climort::forecast::ScenarioInput>, Vec<PathBuf>), Failure> {
    let paths = resolved.scenario_paths()?;
    let mut scenarios = Vec::with_capacity(paths.len());
    for path in &paths {
        let (meta, temps) = io::load_scenario_temperatures(path).map_err(Failure::input)?;
        scenarios.push(climort::forecast::ScenarioInput { meta, temps });
    }
    Ok((scenarios, paths))
}

/// Provenance that already records the given consumed files.
pub fn provenance_using(resolved: &Resolved, inputs: &[PathBuf]) -> Result<Provenance, Failure> {
    let mut prov = Provenance::new(resolved);
    for p in inputs {
        prov.record(p)?;
    }
    Ok(prov)
}
