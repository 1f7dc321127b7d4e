//! Fits the two-population mortality model and its index dynamics, both on
//! raw exposures and on exposures scaled by the attributable fractions, and
//! refuses fits whose identification constraints drift.

use anyhow::Context;
use climort::data::Gender;
use climort::io;
use climort::lilee::{self, ExposureAdjustment, FitOptions, LiLeeFit};
use climort::timeseries;
use nalgebra::DMatrix;

use crate::artifact::{check_fresh, read_json, write_json};
use crate::config::Resolved;
use crate::stages::attribution::AdjustmentFile;
use crate::stages::provenance_using;
use crate::Failure;

const RESIDUAL_LIMIT: f64 = 1e-8;

fn check_constraints(label: &str, fit: &LiLeeFit) -> Result<(), Failure> {
    let residual = fit.constraint_residuals().max();
    if residual > RESIDUAL_LIMIT {
        return Err(Failure::numerical(anyhow::anyhow!(
            "{label} fit violates its identification constraints (residual {residual:.3e})"
        )));
    }
    Ok(())
}

fn fit_pair(
    label: &str,
    annual: &climort::data::AnnualMortalityData,
    adjustment: Option<&ExposureAdjustment>,
) -> Result<(LiLeeFit, timeseries::TrendModel), Failure> {
    let fit = lilee::fit(annual, adjustment, &FitOptions::default())
        .with_context(|| format!("{label} mortality fit failed"))
        .map_err(Failure::numerical)?;
    check_constraints(label, &fit)?;
    let trend = timeseries::fit(&fit.common.index, &fit.female.index, &fit.male.index)
        .with_context(|| format!("{label} trend fit failed"))
        .map_err(Failure::numerical)?;
    Ok((fit, trend))
}

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let cfg = &resolved.config;
    let scheme = cfg.scheme()?;
    let annual_path = resolved.annual_path();
    let annual = io::load_annual_mortality(&annual_path).map_err(Failure::input)?;

    let adjustment_path = resolved.out().join("adjustment.json");
    let (adj_prov, adj_payload) = read_json(&adjustment_path)?;
    check_fresh(&adjustment_path, &adj_prov, resolved)?;
    let adjustment: AdjustmentFile = serde_json::from_value(adj_payload)
        .with_context(|| format!("cannot parse {}", adjustment_path.display()))
        .map_err(Failure::input)?;

    // multiplicative factors 1 + theta on the years the daily calibration
    // window covers; 1 elsewhere
    let ages = &annual.female.ages;
    let years = &annual.female.years;
    let build = |gender: Gender| -> Result<DMatrix<f64>, Failure> {
        let theta = match gender {
            Gender::Female => &adjustment.female,
            Gender::Male => &adjustment.male,
        };
        let mut m = DMatrix::from_element(ages.len(), years.len(), 1.0);
        for (j, &year) in years.iter().enumerate() {
            if year < adjustment.first_year || year > adjustment.last_year {
                continue;
            }
            let yi = (year - adjustment.first_year) as usize;
            for (i, &age) in ages.iter().enumerate() {
                let bucket = scheme.bucket_index(age).map_err(Failure::input)?;
                let t = theta
                    .get(bucket)
                    .and_then(|per_year| per_year.get(yi))
                    .copied()
                    .ok_or_else(|| {
                        Failure::input(anyhow::anyhow!(
                            "adjustment table lacks bucket {bucket}, year {year}"
                        ))
                    })?;
                m[(i, j)] = climort::attribution::exposure_adjustment(t)
                    .map_err(Failure::numerical)?;
            }
        }
        Ok(m)
    };
    let exposure_adjustment = ExposureAdjustment {
        female: build(Gender::Female)?,
        male: build(Gender::Male)?,
    };

    let (unadjusted, trend_unadjusted) = fit_pair("unadjusted", &annual, None)?;
    let (adjusted, trend_adjusted) =
        fit_pair("adjusted", &annual, Some(&exposure_adjustment))?;

    let dir = resolved.out().join("mortality");
    let raw_prov = provenance_using(resolved, &[annual_path.clone()])?;
    let adj_prov = provenance_using(resolved, &[annual_path, adjustment_path])?;
    let bad = |e: serde_json::Error| Failure::input(anyhow::anyhow!(e));
    write_json(
        &dir.join("lilee_unadjusted.json"),
        &raw_prov,
        serde_json::to_value(&unadjusted).map_err(bad)?,
    )?;
    write_json(
        &dir.join("lilee_adjusted.json"),
        &adj_prov,
        serde_json::to_value(&adjusted).map_err(bad)?,
    )?;
    write_json(
        &dir.join("trend_unadjusted.json"),
        &raw_prov,
        serde_json::to_value(&trend_unadjusted).map_err(bad)?,
    )?;
    write_json(
        &dir.join("trend_adjusted.json"),
        &adj_prov,
        serde_json::to_value(&trend_adjusted).map_err(bad)?,
    )?;

    log::info!(
        "adjusted drift {:.3}, AR coefficients {:.3}/{:.3}",
        trend_adjusted.intercepts[0],
        trend_adjusted.ar_female,
        trend_adjusted.ar_male
    );
    Ok(())
}
