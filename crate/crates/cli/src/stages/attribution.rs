//! Tabulates temperature-attributable death fractions per stratum,
//! calendar year and day class, with bootstrap bands from the coefficient
//! uncertainty, and writes the exposure-adjustment factors the mortality
//! stage consumes.

use std::fmt::Write as _;

use chrono::Datelike;
use climort::attribution::{classify_days, DayClass};
use climort::data::quantile_of_sorted;
use climort::dlnm::sample_cross_coefficients;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{write_commented, write_json};
use crate::config::Resolved;
use crate::stages::{load_calibration_data, load_fit_set, provenance_using};
use crate::Failure;

/// All-days attributable fractions per gender, bucket and calendar year;
/// the input of the exposure-adjusted mortality fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustmentFile {
    pub first_year: i32,
    pub last_year: i32,
    pub bucket_labels: Vec<String>,
    /// `theta[bucket][year - first_year]` for each gender.
    pub female: Vec<Vec<f64>>,
    pub male: Vec<Vec<f64>>,
}

/// The five reported day selections, in output order.
const SELECTIONS: [&str; 5] = [
    "all",
    "extreme_cold",
    "moderate_cold",
    "moderate_hot",
    "extreme_hot",
];

struct StratumTable {
    /// `fraction[selection][year]` at the fitted coefficients.
    point: Vec<Vec<f64>>,
    attributed: Vec<Vec<f64>>,
    totals: Vec<f64>,
    /// `fraction[selection][year][draw]`.
    samples: Vec<Vec<Vec<f64>>>,
}

/// Backward attribution of one coefficient vector: attributable deaths per
/// year for all days and for each day class. The all-days sum runs over
/// every day, so the class pieces reproduce it up to reordering of the
/// additions only.
fn accumulate(
    g: &[f64],
    deaths: &[f64],
    classes: &[DayClass],
    year_ranges: &[std::ops::Range<usize>],
) -> Vec<[f64; 5]> {
    let mut out = vec![[0.0f64; 5]; year_ranges.len()];
    for (yi, range) in year_ranges.iter().enumerate() {
        let acc = &mut out[yi];
        for d in range.clone() {
            let v = (1.0 - (-g[d]).exp()) * deaths[d];
            acc[0] += v;
            match classes[d] {
                DayClass::ExtremeCold => acc[1] += v,
                DayClass::ModerateCold => acc[2] += v,
                DayClass::None => {}
                DayClass::ModerateHot => acc[3] += v,
                DayClass::ExtremeHot => acc[4] += v,
            }
        }
    }
    out
}

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let cfg = &resolved.config;
    let data = load_calibration_data(resolved)?;
    let (model, fit_paths) = load_fit_set(resolved)?;
    let scheme = cfg.scheme()?;
    let n_buckets = scheme.n_buckets();
    if model.strata.len() != data.strata.len() {
        return Err(Failure::input(anyhow::anyhow!(
            "{} fit files but {} death strata; refit",
            model.strata.len(),
            data.strata.len()
        )));
    }

    let years: Vec<i32> = (cfg.calibration_first_year..=cfg.calibration_last_year).collect();
    let mut year_ranges = Vec::with_capacity(years.len());
    let mut start = 0usize;
    for &year in &years {
        let end = data.national.dates[start..]
            .iter()
            .position(|d| d.year() != year)
            .map(|o| start + o)
            .unwrap_or(data.national.dates.len());
        year_ranges.push(start..end);
        start = end;
    }

    let var_rows = model
        .def
        .var_basis()
        .design(&data.national.mean)
        .map_err(Failure::numerical)?;
    let n_draws = cfg.forecast.n_sims;

    let tables: Vec<StratumTable> = data
        .strata
        .par_iter()
        .enumerate()
        .map(|(si, stratum)| -> Result<StratumTable, Failure> {
            let fit = model
                .stratum(stratum.gender, stratum.bucket)
                .ok_or_else(|| {
                    Failure::input(anyhow::anyhow!(
                        "no fit for stratum {}/{}",
                        stratum.gender,
                        stratum.bucket_label
                    ))
                })?;
            let deaths: Vec<f64> = stratum.deaths.iter().map(|&d| f64::from(d)).collect();
            let totals: Vec<f64> = year_ranges
                .iter()
                .map(|r| deaths[r.clone()].iter().sum())
                .collect();
            if let Some(yi) = totals.iter().position(|&t| t <= 0.0) {
                return Err(Failure::input(anyhow::anyhow!(
                    "stratum {}/{} has no deaths in {}",
                    stratum.gender,
                    stratum.bucket_label,
                    years[yi]
                )));
            }
            let classes = classify_days(&data.national.mean, fit.mmt, &model.quantiles);
            let reference = model.def.var_basis().eval(fit.mmt);
            let log_rr = |coef: &DVector<f64>| -> Result<Vec<f64>, Failure> {
                let w = model.def.lag_collapse(coef).map_err(Failure::numerical)?;
                Ok((0..deaths.len())
                    .map(|d| {
                        w.iter()
                            .enumerate()
                            .map(|(j, wj)| (var_rows[(d, j)] - reference[j]) * wj)
                            .sum()
                    })
                    .collect())
            };

            let point_acc = accumulate(
                &log_rr(&fit.cross_coefficients())?,
                &deaths,
                &classes,
                &year_ranges,
            );
            let draws = sample_cross_coefficients(
                &fit.cross_coefficients(),
                &fit.cross_covariance(),
                n_draws,
                cfg.seed,
                (si as u64) << 32,
            )
            .map_err(Failure::numerical)?;
            let mut samples =
                vec![vec![vec![0.0f64; n_draws]; years.len()]; SELECTIONS.len()];
            for (di, draw) in draws.iter().enumerate() {
                let acc = accumulate(&log_rr(draw)?, &deaths, &classes, &year_ranges);
                for yi in 0..years.len() {
                    for sel in 0..SELECTIONS.len() {
                        samples[sel][yi][di] = acc[yi][sel] / totals[yi];
                    }
                }
            }
            let point: Vec<Vec<f64>> = (0..SELECTIONS.len())
                .map(|sel| (0..years.len()).map(|yi| point_acc[yi][sel] / totals[yi]).collect())
                .collect();
            let attributed: Vec<Vec<f64>> = (0..SELECTIONS.len())
                .map(|sel| (0..years.len()).map(|yi| point_acc[yi][sel]).collect())
                .collect();
            Ok(StratumTable {
                point,
                attributed,
                totals,
                samples,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut inputs = data.inputs.clone();
    inputs.extend(fit_paths);
    let prov = provenance_using(resolved, &inputs)?;

    let mut body = String::from(
        "gender,bucket,bucket_label,year,day_class,theta,theta_lo,theta_hi,attributed_deaths,total_deaths\n",
    );
    for (si, stratum) in data.strata.iter().enumerate() {
        let t = &tables[si];
        for (yi, &year) in years.iter().enumerate() {
            for (sel, name) in SELECTIONS.iter().enumerate() {
                let mut sample = t.samples[sel][yi].clone();
                sample.sort_by(|a, b| a.partial_cmp(b).expect("finite fractions"));
                let lo = quantile_of_sorted(&sample, 0.025).map_err(Failure::numerical)?;
                let hi = quantile_of_sorted(&sample, 0.975).map_err(Failure::numerical)?;
                writeln!(
                    body,
                    "{},{},{},{},{},{},{},{},{},{}",
                    stratum.gender,
                    stratum.bucket,
                    stratum.bucket_label,
                    year,
                    name,
                    t.point[sel][yi],
                    lo,
                    hi,
                    t.attributed[sel][yi],
                    t.totals[yi]
                )
                .expect("writing to a string cannot fail");
            }
        }
    }
    write_commented(&resolved.out().join("attribution.csv"), &prov, &body)?;

    let pick = |gender: climort::data::Gender| -> Vec<Vec<f64>> {
        (0..n_buckets)
            .map(|b| {
                let si = gender.index() * n_buckets + b;
                tables[si].point[0].clone()
            })
            .collect()
    };
    let adjustment = AdjustmentFile {
        first_year: cfg.calibration_first_year,
        last_year: cfg.calibration_last_year,
        bucket_labels: (0..n_buckets).map(|b| scheme.label(b)).collect(),
        female: pick(climort::data::Gender::Female),
        male: pick(climort::data::Gender::Male),
    };
    write_json(
        &resolved.out().join("adjustment.json"),
        &prov,
        serde_json::to_value(&adjustment).map_err(|e| Failure::input(anyhow::anyhow!(e)))?,
    )?;

    let national_last: f64 = {
        let yi = years.len() - 1;
        let attributed: f64 = tables.iter().map(|t| t.attributed[0][yi]).sum();
        let total: f64 = tables.iter().map(|t| t.totals[yi]).sum();
        attributed / total
    };
    log::info!(
        "attribution over {} years; national all-days fraction in {}: {:.2}%",
        years.len(),
        years[years.len() - 1],
        100.0 * national_last
    );
    Ok(())
}
