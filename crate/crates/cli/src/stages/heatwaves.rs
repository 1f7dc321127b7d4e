//! Detects heatwave episodes in every climate scenario against thresholds
//! taken from the observed national series.

use std::fmt::Write as _;

use anyhow::Context;
use climort::data::aggregate_stations;
use climort::heatwave::{detect, exceedance_thresholds};
use climort::io;

use crate::artifact::write_commented;
use crate::config::Resolved;
use crate::stages::{load_scenarios, provenance_using};
use crate::Failure;

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let cfg = &resolved.config;
    let stations_path = resolved.stations_path();
    let stations = io::load_station_temperatures(&stations_path).map_err(Failure::input)?;
    let national = aggregate_stations(&stations).map_err(Failure::input)?;
    let (first, last) = cfg.heatwave_reference;
    let thresholds = exceedance_thresholds(&national, first, last)
        .with_context(|| {
            format!("station data does not cover the heatwave reference window {first}..{last}")
        })
        .map_err(Failure::input)?;
    log::info!(
        "thresholds over {first}..{last}: minima above {:.2} C, maxima above {:.2} C",
        thresholds.min_threshold,
        thresholds.max_threshold
    );

    let (scenarios, scenario_paths) = load_scenarios(resolved)?;
    let mut body = String::new();
    writeln!(body, "# reference={first}-{last}").unwrap();
    writeln!(body, "# min_threshold={}", thresholds.min_threshold).unwrap();
    writeln!(body, "# max_threshold={}", thresholds.max_threshold).unwrap();
    body.push_str("scenario,rcp,start,end,duration,severity,intensity\n");
    let mut n_episodes = 0usize;
    for s in &scenarios {
        for e in detect(&s.temps, &thresholds) {
            n_episodes += 1;
            writeln!(
                body,
                "{},{},{},{},{},{},{}",
                s.meta.model_id(),
                s.meta.rcp,
                e.start,
                e.end,
                e.days,
                e.severity,
                e.intensity
            )
            .expect("writing to a string cannot fail");
        }
    }

    let mut inputs = vec![stations_path];
    inputs.extend(scenario_paths);
    let prov = provenance_using(resolved, &inputs)?;
    write_commented(&resolved.out().join("heatwaves.csv"), &prov, &body)?;
    log::info!("{n_episodes} episodes across {} scenarios", scenarios.len());
    Ok(())
}
