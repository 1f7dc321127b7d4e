//! Condenses the run's outputs into one summary table and a console
//! digest: attributable fractions nationally by year, projected
//! life-expectancy losses at the horizon, and heatwave episode statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use crate::artifact::{check_fresh, read_commented_provenance, write_commented};
use crate::config::Resolved;
use crate::stages::provenance_using;
use crate::Failure;

#[derive(Deserialize)]
struct AttributionRow {
    #[allow(dead_code)]
    gender: String,
    #[allow(dead_code)]
    bucket: usize,
    #[allow(dead_code)]
    bucket_label: String,
    year: i32,
    day_class: String,
    #[allow(dead_code)]
    theta: f64,
    #[allow(dead_code)]
    theta_lo: f64,
    #[allow(dead_code)]
    theta_hi: f64,
    attributed_deaths: f64,
    total_deaths: f64,
}

#[derive(Deserialize)]
struct ForecastRow {
    #[allow(dead_code)]
    scenario: String,
    rcp: String,
    gender: String,
    year: i32,
    age: u16,
    metric: String,
    median: f64,
    lo95: f64,
    hi95: f64,
}

#[derive(Deserialize)]
struct HeatwaveRow {
    scenario: String,
    rcp: String,
    #[allow(dead_code)]
    start: String,
    #[allow(dead_code)]
    end: String,
    duration: usize,
    severity: f64,
    intensity: f64,
}

fn read_rows<T: serde::de::DeserializeOwned>(
    path: &Path,
    resolved: &Resolved,
) -> Result<Vec<T>, Failure> {
    let prov = read_commented_provenance(path)?;
    check_fresh(path, &prov, resolved)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map_err(Failure::input)?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("cannot parse {}", path.display()))
        .map_err(Failure::input)
}

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let out = resolved.out();
    let attribution_path = out.join("attribution.csv");
    let forecast_path = out.join("forecast.csv");
    let heatwaves_path = out.join("heatwaves.csv");
    let attribution: Vec<AttributionRow> = read_rows(&attribution_path, resolved)?;
    let forecast: Vec<ForecastRow> = read_rows(&forecast_path, resolved)?;
    let heatwaves: Vec<HeatwaveRow> = read_rows(&heatwaves_path, resolved)?;

    let mut body =
        String::from("section,rcp,scenario,gender,age,year,key,value,lo95,hi95\n");

    // national attributable fractions: deaths-weighted across strata
    let mut by_year: BTreeMap<(i32, String), (f64, f64)> = BTreeMap::new();
    for r in &attribution {
        let entry = by_year
            .entry((r.year, r.day_class.clone()))
            .or_insert((0.0, 0.0));
        entry.0 += r.attributed_deaths;
        entry.1 += r.total_deaths;
    }
    for ((year, class), (attributed, total)) in &by_year {
        writeln!(
            body,
            "attribution,,,,,{year},theta:{class},{},,",
            attributed / total
        )
        .expect("writing to a string cannot fail");
    }

    // life-expectancy losses at the end of the horizon
    let last_year = forecast.iter().map(|r| r.year).max().unwrap_or_default();
    let mut console: Vec<String> = Vec::new();
    for r in &forecast {
        if r.year != last_year || !r.metric.starts_with("delta_e:") {
            continue;
        }
        writeln!(
            body,
            "life_expectancy_loss,{},pooled,{},{},{},{},{},{},{}",
            r.rcp, r.gender, r.age, r.year, r.metric, r.median, r.lo95, r.hi95
        )
        .expect("writing to a string cannot fail");
        if r.age == 0 && r.metric == "delta_e:all" {
            console.push(format!(
                "  {} gender {}: {:.3} years lost at birth in {} [{:.3}, {:.3}]",
                r.rcp, r.gender, r.median, r.year, r.lo95, r.hi95
            ));
        }
    }

    // heatwave load per pathway and climate model
    let mut per_model: BTreeMap<(String, String), Vec<&HeatwaveRow>> = BTreeMap::new();
    for r in &heatwaves {
        per_model
            .entry((r.rcp.clone(), r.scenario.clone()))
            .or_default()
            .push(r);
    }
    for ((rcp, scenario), rows) in &per_model {
        let n = rows.len();
        let mean_duration = rows.iter().map(|r| r.duration as f64).sum::<f64>() / n as f64;
        let max_duration = rows.iter().map(|r| r.duration).max().unwrap_or(0);
        let max_severity = rows.iter().map(|r| r.severity).fold(0.0f64, f64::max);
        let max_intensity = rows.iter().map(|r| r.intensity).fold(0.0f64, f64::max);
        for (key, value) in [
            ("episodes", n as f64),
            ("mean_duration", mean_duration),
            ("max_duration", max_duration as f64),
            ("max_severity", max_severity),
            ("max_intensity", max_intensity),
        ] {
            writeln!(body, "heatwaves,{rcp},{scenario},,,,{key},{value},,")
                .expect("writing to a string cannot fail");
        }
    }

    let prov = provenance_using(
        resolved,
        &[attribution_path, forecast_path, heatwaves_path],
    )?;
    write_commented(&out.join("report.csv"), &prov, &body)?;

    let (last_attr_year, national) = by_year
        .iter()
        .filter(|((_, class), _)| class == "all")
        .map(|((year, _), (a, t))| (*year, a / t))
        .next_back()
        .unwrap_or((0, 0.0));
    println!("Temperature-attributable deaths, national, {last_attr_year}: {:.2}%", 100.0 * national);
    println!("Projected life-expectancy losses at the horizon:");
    for line in &console {
        println!("{line}");
    }
    println!(
        "Heatwaves: {} episodes in {} scenario runs with at least one",
        heatwaves.len(),
        per_model.len()
    );
    log::info!("report written to {}", out.join("report.csv").display());
    Ok(())
}
