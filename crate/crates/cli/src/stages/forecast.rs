//! Projects mortality under every climate scenario and writes the pooled
//! percentile bands.

use std::fmt::Write as _;

use anyhow::Context;
use climort::forecast::{run_scenarios, ForecastError};
use climort::lilee::LiLeeFit;
use climort::timeseries::TrendModel;

use crate::artifact::{check_fresh, read_json, write_commented};
use crate::config::Resolved;
use crate::stages::{load_fit_set, load_scenarios, provenance_using};
use crate::Failure;

fn classify(err: ForecastError) -> Failure {
    match err {
        ForecastError::BadConfig(_)
        | ForecastError::NoScenarios
        | ForecastError::AgeNotInTable { .. }
        | ForecastError::AgesNotConsecutive
        | ForecastError::MissingStratum { .. } => Failure::input(anyhow::anyhow!(err)),
        other => Failure::numerical(anyhow::anyhow!(other)),
    }
}

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let cfg = &resolved.config;
    let scheme = cfg.scheme()?;
    let (risk, fit_paths) = load_fit_set(resolved)?;

    let mortality_dir = resolved.out().join("mortality");
    let lilee_path = mortality_dir.join("lilee_adjusted.json");
    let (prov_l, payload) = read_json(&lilee_path)?;
    check_fresh(&lilee_path, &prov_l, resolved)?;
    let mortality: LiLeeFit = serde_json::from_value(payload)
        .with_context(|| format!("cannot parse {}", lilee_path.display()))
        .map_err(Failure::input)?;
    let trend_path = mortality_dir.join("trend_adjusted.json");
    let (prov_t, payload) = read_json(&trend_path)?;
    check_fresh(&trend_path, &prov_t, resolved)?;
    let trend: TrendModel = serde_json::from_value(payload)
        .with_context(|| format!("cannot parse {}", trend_path.display()))
        .map_err(Failure::input)?;

    let (scenarios, scenario_paths) = load_scenarios(resolved)?;
    let rows = run_scenarios(
        &mortality,
        &trend,
        &risk,
        &scheme,
        &scenarios,
        &cfg.forecast,
        cfg.seed,
    )
    .map_err(classify)?;

    let mut inputs = fit_paths;
    inputs.push(lilee_path);
    inputs.push(trend_path);
    inputs.extend(scenario_paths);
    let prov = provenance_using(resolved, &inputs)?;

    let mut body = String::from("scenario,rcp,gender,year,age,metric,median,lo95,hi95\n");
    for r in &rows {
        writeln!(
            body,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario, r.rcp, r.gender, r.year, r.age, r.metric, r.mid, r.lo, r.hi
        )
        .expect("writing to a string cannot fail");
    }
    write_commented(&resolved.out().join("forecast.csv"), &prov, &body)?;
    log::info!(
        "{} band rows over {} scenarios, {} simulations each",
        rows.len(),
        scenarios.len(),
        cfg.forecast.n_sims
    );
    Ok(())
}
