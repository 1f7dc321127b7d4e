//! Mortality projection under climate scenarios.
//!
//! Each simulated future combines one stochastic path of the period
//! indices, one draw of the temperature-response coefficients, and the
//! daily temperatures of one climate model run (paired round-robin within
//! each emission pathway). Baseline death rates come from the factor
//! model; the temperature adjustment multiplies them by one plus the
//! forward-looking attributable fraction of that year's scenario
//! temperatures. Life expectancies are computed from each year's period
//! life table, and results are pooled across the pathway's climate models
//! into empirical 2.5/50/97.5 percentile bands.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{classify_days, exposure_adjustment, uniform_year_weights, AttrError, DayClass};
use crate::basis::BasisError;
use crate::data::{quantile_of_sorted, AgeBucketScheme, DailyTemperatureSeries, DataError, Gender};
use crate::dlnm::{sample_cross_coefficients, DlnmError, DlnmModel, StratumFit};
use crate::io::{Rcp, ScenarioMeta};
use crate::lilee::LiLeeFit;
use crate::timeseries::{simulate_paths, TrendModel, TsError};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Trend(#[from] TsError),
    #[error(transparent)]
    Risk(#[from] DlnmError),
    #[error(transparent)]
    Attribution(#[from] AttrError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("no temperature-response fit for stratum {gender}/{bucket}")]
    MissingStratum { gender: &'static str, bucket: usize },
    #[error("reporting age {age} is not in the mortality table")]
    AgeNotInTable { age: u16 },
    #[error("mortality table ages must be consecutive single years starting at 0")]
    AgesNotConsecutive,
    #[error("no climate scenarios supplied")]
    NoScenarios,
    #[error("bad forecast configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub horizon_years: usize,
    pub n_sims: usize,
    pub report_ages: Vec<u16>,
    /// Day subsets the temperature-adjusted metrics are reported under:
    /// `"all"`, a single day-class name, or several class names joined
    /// with `+` (for example `"moderate_hot+extreme_hot"`).
    pub day_sets: Vec<String>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon_years: 80,
            n_sims: 500,
            report_ages: vec![0, 65],
            day_sets: vec!["all".to_string(), "extreme_hot".to_string()],
        }
    }
}

/// A reported day subset: every day, or the union of some day classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySet {
    pub label: String,
    /// Empty means every day.
    pub classes: Vec<DayClass>,
}

/// Parses a day-set specification: `"all"` or `+`-joined class names.
pub fn parse_day_set(spec: &str) -> Result<DaySet, ForecastError> {
    let label = spec.trim().to_string();
    if label.is_empty() {
        return Err(ForecastError::BadConfig(
            "empty day-set specification".to_string(),
        ));
    }
    if label == "all" {
        return Ok(DaySet {
            label,
            classes: Vec::new(),
        });
    }
    let mut classes = Vec::new();
    for part in label.split('+') {
        let class = DayClass::parse(part.trim()).ok_or_else(|| {
            ForecastError::BadConfig(format!("unknown day class '{}' in day set '{label}'", part.trim()))
        })?;
        if !classes.contains(&class) {
            classes.push(class);
        }
    }
    Ok(DaySet { label, classes })
}

/// Attributable fraction of a set from the per-class table; unions add the
/// disjoint class contributions exactly.
fn set_theta(by_class: &[f64; 5], set: &DaySet) -> f64 {
    if set.classes.is_empty() {
        return by_class[0];
    }
    set.classes
        .iter()
        .map(|c| match c {
            DayClass::ExtremeCold => by_class[1],
            DayClass::ModerateCold => by_class[2],
            // days sitting exactly at the minimum have zero excess risk
            DayClass::None => 0.0,
            DayClass::ModerateHot => by_class[3],
            DayClass::ExtremeHot => by_class[4],
        })
        .sum()
}

/// One climate model run: its identity and daily temperature series.
#[derive(Debug, Clone)]
pub struct ScenarioInput {
    pub meta: ScenarioMeta,
    pub temps: DailyTemperatureSeries,
}

/// Empirical 2.5th, 50th and 97.5th percentiles across simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryBand {
    pub lo: f64,
    pub mid: f64,
    pub hi: f64,
}

/// Percentile band of a sample; the slice is sorted in place.
pub fn summary_band(values: &mut [f64]) -> Result<SummaryBand, DataError> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite simulation values"));
    Ok(SummaryBand {
        lo: quantile_of_sorted(values, 0.025)?,
        mid: quantile_of_sorted(values, 0.5)?,
        hi: quantile_of_sorted(values, 0.975)?,
    })
}

/// `1 - exp(-m)`: the probability of dying within the year at hazard `m`.
pub fn death_probability(rate: f64) -> f64 {
    1.0 - (-rate).exp()
}

/// Remaining life expectancy from the age of `q[0]`, as the sum of
/// survival products: `sum_k prod_{j<=k} (1 - q_j)`.
pub fn life_expectancy(q: &[f64]) -> f64 {
    let mut cumulative = 1.0;
    let mut e = 0.0;
    for &qx in q {
        cumulative *= 1.0 - qx;
        e += cumulative;
    }
    e
}

/// One output row: a pooled percentile band for a metric at one gender,
/// age and calendar year under one emission pathway.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub rcp: Rcp,
    /// Always "pooled": bands mix the pathway's climate models.
    pub scenario: String,
    pub metric: String,
    pub gender: Gender,
    pub age: u16,
    pub year: i32,
    pub lo: f64,
    pub mid: f64,
    pub hi: f64,
}

/// Per-cell series layout: slot 0 holds the virtual rate, then each day
/// set contributes four slots (adjusted rate, death probability, life
/// expectancy, expectancy loss).
fn metric_names(sets: &[DaySet]) -> Vec<String> {
    let mut names = Vec::with_capacity(1 + 4 * sets.len());
    names.push("m_tilde".to_string());
    for set in sets {
        names.push(format!("m_hat:{}", set.label));
        names.push(format!("q:{}", set.label));
        names.push(format!("e:{}", set.label));
        names.push(format!("delta_e:{}", set.label));
    }
    names
}

/// Scenario data preprocessed against the fitted model: spline rows and
/// day classes are draw-independent, so they are shared by all
/// simulations using this climate model.
struct ModelPrep {
    /// Temperature spline rows over the forecast days.
    var_rows: DMatrix<f64>,
    /// Day index ranges of each forecast year.
    year_ranges: Vec<std::ops::Range<usize>>,
    /// Uniform within-year day weights.
    weights: Vec<f64>,
    /// Per stratum: spline row at its minimum-mortality temperature.
    reference_rows: Vec<Vec<f64>>,
    /// Per stratum: class of every forecast day.
    classes: Vec<Vec<DayClass>>,
}

fn prep_model(
    input: &ScenarioInput,
    risk: &DlnmModel,
    strata: &[&StratumFit],
    years: &[i32],
) -> Result<ModelPrep, ForecastError> {
    let temps = input
        .temps
        .restrict_years(years[0], *years.last().expect("years non-empty"))?;
    let var_rows = risk.def.var_basis().design(&temps.mean)?;
    let weights = uniform_year_weights(&temps.dates);
    let mut year_ranges = Vec::with_capacity(years.len());
    let mut start = 0;
    for &year in years {
        let end = temps.dates[start..]
            .iter()
            .position(|d| chrono::Datelike::year(d) != year)
            .map(|offset| start + offset)
            .unwrap_or(temps.dates.len());
        year_ranges.push(start..end);
        start = end;
    }
    let reference_rows = strata
        .iter()
        .map(|s| risk.def.var_basis().eval(s.mmt))
        .collect();
    let classes = strata
        .iter()
        .map(|s| classify_days(&temps.mean, s.mmt, &risk.quantiles))
        .collect();
    Ok(ModelPrep {
        var_rows,
        year_ranges,
        weights,
        reference_rows,
        classes,
    })
}

/// Attributable fractions for one simulation: `theta[stratum][year][set]`.
fn theta_table(
    prep: &ModelPrep,
    risk: &DlnmModel,
    draws: &[Vec<DVector<f64>>],
    sim: usize,
    n_years: usize,
) -> Result<Vec<Vec<[f64; 5]>>, ForecastError> {
    let n_strata = draws.len();
    let mut theta = vec![vec![[0.0f64; 5]; n_years]; n_strata];
    for si in 0..n_strata {
        let w = risk.def.lag_collapse(&draws[si][sim])?;
        let r0 = &prep.reference_rows[si];
        for (yi, range) in prep.year_ranges.iter().enumerate() {
            let acc = &mut theta[si][yi];
            for d in range.clone() {
                let mut g = 0.0;
                for (j, wj) in w.iter().enumerate() {
                    g += (prep.var_rows[(d, j)] - r0[j]) * wj;
                }
                let v = prep.weights[d] * (g.exp() - 1.0);
                acc[0] += v;
                match prep.classes[si][d] {
                    DayClass::ExtremeCold => acc[1] += v,
                    DayClass::ModerateCold => acc[2] += v,
                    DayClass::None => {}
                    DayClass::ModerateHot => acc[3] += v,
                    DayClass::ExtremeHot => acc[4] += v,
                }
            }
        }
    }
    Ok(theta)
}

/// Runs the full scenario ensemble and pools each pathway's simulations
/// into percentile bands per metric, gender, reporting age and year.
pub fn run_scenarios(
    mortality: &LiLeeFit,
    trend: &TrendModel,
    risk: &DlnmModel,
    scheme: &AgeBucketScheme,
    scenarios: &[ScenarioInput],
    config: &ForecastConfig,
    root_seed: u64,
) -> Result<Vec<ForecastRow>, ForecastError> {
    if scenarios.is_empty() {
        return Err(ForecastError::NoScenarios);
    }
    if config.horizon_years == 0 || config.n_sims == 0 {
        return Err(ForecastError::BadConfig(
            "horizon_years and n_sims must be positive".to_string(),
        ));
    }
    if config.report_ages.is_empty() {
        return Err(ForecastError::BadConfig(
            "report_ages must not be empty".to_string(),
        ));
    }
    if config.day_sets.is_empty() {
        return Err(ForecastError::BadConfig(
            "day_sets must not be empty".to_string(),
        ));
    }
    let sets: Vec<DaySet> = config
        .day_sets
        .iter()
        .map(|s| parse_day_set(s))
        .collect::<Result<_, _>>()?;
    let names = metric_names(&sets);
    let slots_per_cell = names.len();
    let ages = &mortality.ages;
    if ages.is_empty() || ages[0] != 0 || ages.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(ForecastError::AgesNotConsecutive);
    }
    let report_idx: Vec<usize> = config
        .report_ages
        .iter()
        .map(|&a| {
            ages.iter()
                .position(|&x| x == a)
                .ok_or(ForecastError::AgeNotInTable { age: a })
        })
        .collect::<Result<_, _>>()?;
    // stratum lookup for every single age, females first then males
    let n_buckets = scheme.n_buckets();
    let age_bucket: Vec<usize> = ages
        .iter()
        .map(|&a| scheme.bucket_index(a).map_err(ForecastError::from))
        .collect::<Result<_, _>>()?;
    let mut strata: Vec<&StratumFit> = Vec::with_capacity(2 * n_buckets);
    for gender in Gender::BOTH {
        for bucket in 0..n_buckets {
            strata.push(risk.stratum(gender, bucket).ok_or(
                ForecastError::MissingStratum {
                    gender: gender.code(),
                    bucket,
                },
            )?);
        }
    }

    let last_year = *mortality.years.last().expect("fitted years non-empty");
    let years: Vec<i32> = (1..=config.horizon_years as i32)
        .map(|h| last_year + h)
        .collect();
    let y_last = Vector3::new(
        *mortality.common.index.last().unwrap(),
        *mortality.female.index.last().unwrap(),
        *mortality.male.index.last().unwrap(),
    );
    let paths = simulate_paths(trend, &y_last, years.len(), config.n_sims, root_seed)?;

    let draws: Vec<Vec<DVector<f64>>> = strata
        .iter()
        .enumerate()
        .map(|(si, s)| {
            sample_cross_coefficients(
                &s.cross_coefficients(),
                &s.cross_covariance(),
                config.n_sims,
                root_seed,
                (si as u64) << 32,
            )
        })
        .collect::<Result<_, _>>()?;

    let mut by_rcp: BTreeMap<Rcp, Vec<&ScenarioInput>> = BTreeMap::new();
    for s in scenarios {
        by_rcp.entry(s.meta.rcp).or_default().push(s);
    }

    let n_report = report_idx.len();
    let n_years = years.len();
    let n_series = 2 * n_report * n_years * slots_per_cell;
    let mut rows = Vec::new();

    for (rcp, mut models) in by_rcp {
        models.sort_by_key(|m| m.meta.model_id());
        let preps: Vec<ModelPrep> = models
            .iter()
            .map(|m| prep_model(m, risk, &strata, &years))
            .collect::<Result<_, _>>()?;

        let sim_values: Vec<Vec<f64>> = (0..config.n_sims)
            .into_par_iter()
            .map(|i| -> Result<Vec<f64>, ForecastError> {
                let prep = &preps[i % preps.len()];
                let theta = theta_table(prep, risk, &draws, i, n_years)?;
                let path = &paths[i];
                let mut out = vec![0.0; n_series];
                for (gi, gender) in Gender::BOTH.into_iter().enumerate() {
                    let gf = mortality.gender(gender);
                    for yi in 0..n_years {
                        let k = path[(0, yi)];
                        let kappa = path[(1 + gi, yi)];
                        let m_tilde: Vec<f64> = (0..ages.len())
                            .map(|x| {
                                (mortality.common.level[x]
                                    + mortality.common.loading[x] * k
                                    + gf.level[x]
                                    + gf.loading[x] * kappa)
                                    .exp()
                            })
                            .collect();
                        let q_tilde: Vec<f64> =
                            m_tilde.iter().map(|&m| death_probability(m)).collect();
                        // adjusted tables for each day subset
                        let mut q_hat = vec![vec![0.0; ages.len()]; sets.len()];
                        let mut m_hat = vec![vec![0.0; ages.len()]; sets.len()];
                        for (s, set) in sets.iter().enumerate() {
                            for x in 0..ages.len() {
                                let si = gi * n_buckets + age_bucket[x];
                                let adj =
                                    exposure_adjustment(set_theta(&theta[si][yi], set))?;
                                let m = m_tilde[x] * adj;
                                m_hat[s][x] = m;
                                q_hat[s][x] = death_probability(m);
                            }
                        }
                        for (ai, &xi) in report_idx.iter().enumerate() {
                            let base = (((gi * n_report + ai) * n_years) + yi) * slots_per_cell;
                            let e_tilde = life_expectancy(&q_tilde[xi..]);
                            out[base] = m_tilde[xi];
                            for s in 0..sets.len() {
                                let e_hat = life_expectancy(&q_hat[s][xi..]);
                                out[base + 1 + 4 * s] = m_hat[s][xi];
                                out[base + 2 + 4 * s] = q_hat[s][xi];
                                out[base + 3 + 4 * s] = e_hat;
                                out[base + 4 + 4 * s] = e_tilde - e_hat;
                            }
                        }
                    }
                }
                Ok(out)
            })
            .collect::<Result<_, _>>()?;

        let mut sample = vec![0.0; config.n_sims];
        for (gi, gender) in Gender::BOTH.into_iter().enumerate() {
            for (ai, &age) in config.report_ages.iter().enumerate() {
                for (yi, &year) in years.iter().enumerate() {
                    let base = (((gi * n_report + ai) * n_years) + yi) * slots_per_cell;
                    for (slot, name) in names.iter().enumerate() {
                        for (s, values) in sim_values.iter().enumerate() {
                            sample[s] = values[base + slot];
                        }
                        let band = summary_band(&mut sample)?;
                        rows.push(ForecastRow {
                            rcp,
                            scenario: "pooled".to_string(),
                            metric: name.clone(),
                            gender,
                            age,
                            year,
                            lo: band.lo,
                            mid: band.mid,
                            hi: band.hi,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}
