//! Generates the bundled synthetic dataset: station temperatures, daily
//! deaths driven by a known U-shaped temperature response, annual mortality
//! surfaces with known trend parameters, and climate scenario series.

use climort::data::AgeBucketScheme;
use climort::io::{self, DailyDeathRecord};
use climort::synth;

use crate::artifact::{prepend_header, write_json, Provenance};
use crate::config::Resolved;
use crate::Failure;

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let cfg = &resolved.config;
    let scheme = cfg.scheme()?;
    if scheme != AgeBucketScheme::default_four() {
        return Err(Failure::input(anyhow::anyhow!(
            "the synthetic generator is calibrated for the default 0-64/65-74/75-84/85+ scheme; \
             adjust bucket_lower_bounds or drop them from the config"
        )));
    }
    let data = synth::generate(&cfg.synth, cfg.seed).map_err(Failure::input)?;
    let prov = Provenance::new(resolved);
    let data_dir = resolved.out().join("data");

    let stations = data_dir.join("stations.csv");
    io::write_station_temperatures(&stations, &data.stations).map_err(Failure::input)?;
    prepend_header(&stations, &prov)?;

    let deaths = data_dir.join("deaths.csv");
    // each stratum is reported under its bucket's first age; the loader
    // folds single ages back into the same buckets
    let records = data.strata.iter().flat_map(|s| {
        let age = *scheme.ages_in(s.bucket).start();
        s.dates
            .iter()
            .zip(s.deaths.iter())
            .map(move |(&date, &deaths)| DailyDeathRecord {
                date,
                gender: s.gender,
                age,
                deaths,
            })
    });
    io::write_daily_deaths(&deaths, records).map_err(Failure::input)?;
    prepend_header(&deaths, &prov)?;

    let annual = data_dir.join("annual.csv");
    io::write_annual_mortality(&annual, &data.annual).map_err(Failure::input)?;
    prepend_header(&annual, &prov)?;

    for (meta, series) in &data.scenarios {
        let path = data_dir
            .join("scenarios")
            .join(format!("{}_{}_{}.csv", meta.gcm, meta.rcm, meta.rcp));
        io::write_scenario_temperatures(&path, meta, series).map_err(Failure::input)?;
        prepend_header(&path, &prov)?;
    }

    write_json(
        &data_dir.join("truth.json"),
        &prov,
        serde_json::to_value(&data.truth)
            .map_err(|e| Failure::input(anyhow::anyhow!(e)))?,
    )?;
    write_json(
        &resolved.out().join("config.json"),
        &prov,
        serde_json::to_value(&resolved.config)
            .map_err(|e| Failure::input(anyhow::anyhow!(e)))?,
    )?;

    log::info!(
        "wrote {} stations, {} strata over {} days, {} scenarios to {}",
        data.stations.len(),
        data.strata.len(),
        data.national.len(),
        data.scenarios.len(),
        data_dir.display()
    );
    Ok(())
}
