//! Synthetic data with known ground truth.
//!
//! Generates an internally consistent bundle: station temperature series
//! whose equal-weight aggregate drives daily death counts through a known
//! U-shaped lagged temperature response; annual death/exposure surfaces
//! following a known bilinear mortality structure; and climate scenario
//! series with pathway-specific warming. The generating parameters are
//! returned alongside the data so tests can compare recovered quantities
//! against them.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    aggregate_stations, AgeBucketScheme, AnnualMortalityData, AnnualMortalitySurface,
    DailyStratumSeries, DailyTemperatureSeries, DataError, Gender,
};
use crate::io::{Rcp, ScenarioMeta};
use crate::rng::{stream, Namespace};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("bad synthetic configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// First and last year of the daily calibration window.
    pub calibration_first_year: i32,
    pub calibration_last_year: i32,
    /// First year of the annual mortality surfaces (they end with the
    /// calibration window).
    pub annual_first_year: i32,
    /// Last year covered by the climate scenario series (they start right
    /// after the calibration window).
    pub scenario_last_year: i32,
    pub n_stations: usize,
    pub models_per_rcp: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            calibration_first_year: 1998,
            calibration_last_year: 2017,
            annual_first_year: 1980,
            scenario_last_year: 2100,
            n_stations: 4,
            models_per_rcp: 2,
        }
    }
}

/// The generating parameters, written alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    /// Temperature of minimum mortality.
    pub mmt: f64,
    pub cold_scale: f64,
    pub cold_width: f64,
    pub heat_scale: f64,
    pub heat_width: f64,
    /// Exponential decay constant of the lag weights.
    pub lag_decay: f64,
    pub max_lag: usize,
    /// End-of-century warming by pathway, degrees Celsius.
    pub warming_2100: BTreeMap<String, f64>,
    /// Drift of the common mortality index per year.
    pub common_index_drift: f64,
}

/// Cumulative log relative risk of the generating response at one
/// temperature: an asymmetric parabola with its minimum at the true MMT.
pub fn true_cumulative_log_rr(truth: &SyntheticTruth, temp: f64) -> f64 {
    if temp < truth.mmt {
        let z = (truth.mmt - temp) / truth.cold_width;
        truth.cold_scale * z * z
    } else {
        let z = (temp - truth.mmt) / truth.heat_width;
        truth.heat_scale * z * z
    }
}

/// Normalised exponential lag profile `w_l`, summing to one.
pub fn true_lag_weights(truth: &SyntheticTruth) -> Vec<f64> {
    let raw: Vec<f64> = (0..=truth.max_lag)
        .map(|l| (-(l as f64) / truth.lag_decay).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Everything the pipeline consumes, plus the truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub stations: Vec<DailyTemperatureSeries>,
    /// Equal-weight aggregate of the stations; the death counts were
    /// generated from its mean series.
    pub national: DailyTemperatureSeries,
    pub strata: Vec<DailyStratumSeries>,
    pub annual: AnnualMortalityData,
    pub scenarios: Vec<(ScenarioMeta, DailyTemperatureSeries)>,
    pub truth: SyntheticTruth,
}

fn day_count(first_year: i32, last_year: i32) -> (NaiveDate, usize) {
    let start = NaiveDate::from_ymd_opt(first_year, 1, 1).expect("valid year");
    let end = NaiveDate::from_ymd_opt(last_year, 12, 31).expect("valid year");
    (start, (end - start).num_days() as usize + 1)
}

/// Smooth seasonal mean temperature for a day index.
fn seasonal(day: usize) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * (day as f64 - 15.0) / 365.25;
    11.5 - 8.5 * phase.cos()
}

/// Shared national weather anomaly: persistent AR(1) synoptic noise plus
/// occasional multi-day summer heat blocks.
fn national_anomaly(
    n_days: usize,
    start: NaiveDate,
    seed: u64,
    stream_index: u64,
    heat_amplitude: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let mut rng = stream(seed, Namespace::Synthetic, stream_index);
    let mut anomaly = vec![0.0; n_days];
    let mut w = 0.0;
    for a in anomaly.iter_mut() {
        w = 0.85 * w + 2.0 * rng.sample::<f64, _>(StandardNormal);
        *a = w;
    }
    // heat blocks: one or two per summer, a few degrees for several days
    let mut d = 0;
    while d < n_days {
        let date = start + chrono::Days::new(d as u64);
        if date.month() == 6 && date.day() == 1 {
            let events = 1 + usize::from(rng.random::<f64>() < 0.5);
            for _ in 0..events {
                let offset = rng.random_range(0..80usize);
                let len = rng.random_range(4..9usize);
                let amp = (3.0 + 4.0 * rng.random::<f64>()) * heat_amplitude(d);
                for k in 0..len {
                    let idx = d + offset + k;
                    if idx < n_days {
                        anomaly[idx] += amp;
                    }
                }
            }
            d += 300; // skip to the next year
        } else {
            d += 1;
        }
    }
    anomaly
}

fn make_stations(
    config: &SynthConfig,
    seed: u64,
) -> Result<Vec<DailyTemperatureSeries>, SynthError> {
    let (start, n_days) = day_count(config.calibration_first_year, config.calibration_last_year);
    let shared = national_anomaly(n_days, start, seed, 50, |_| 1.0);
    let dates: Vec<NaiveDate> = (0..n_days)
        .map(|d| start + chrono::Days::new(d as u64))
        .collect();
    let s = config.n_stations;
    let mut stations = Vec::with_capacity(s);
    for i in 0..s {
        let mut rng = stream(seed, Namespace::Synthetic, i as u64);
        let offset = (i as f64 - (s as f64 - 1.0) / 2.0) * 1.0;
        let mut local = 0.0;
        let mut mean = Vec::with_capacity(n_days);
        let mut min = Vec::with_capacity(n_days);
        let mut max = Vec::with_capacity(n_days);
        for d in 0..n_days {
            local = 0.6 * local + 1.0 * rng.sample::<f64, _>(StandardNormal);
            let m = seasonal(d) + shared[d] + offset + local;
            let phase = 2.0 * std::f64::consts::PI * d as f64 / 365.25;
            let spread_down = 4.2 + 1.3 * phase.sin();
            let spread_up = 5.1 + 1.6 * (phase + 0.8).sin();
            mean.push(m);
            min.push(m - spread_down);
            max.push(m + spread_up);
        }
        stations.push(DailyTemperatureSeries::new(
            format!("station_{:02}", i + 1),
            dates.clone(),
            min,
            mean,
            max,
        )?);
    }
    Ok(stations)
}

/// Daily baseline deaths per stratum (gender-major, bucket within), before
/// seasonality and the temperature response.
const BASE_DEATHS: [[f64; 4]; 2] = [[9.0, 11.0, 19.0, 24.0], [11.0, 14.0, 17.0, 15.0]];

fn make_strata(
    national: &DailyTemperatureSeries,
    truth: &SyntheticTruth,
    scheme: &AgeBucketScheme,
    seed: u64,
) -> Result<Vec<DailyStratumSeries>, SynthError> {
    let n_days = national.len();
    let weights = true_lag_weights(truth);
    // lagged temperature effect on the log scale, truncated windows at the
    // start renormalised so early days stay on a comparable footing
    let mut effect = vec![0.0; n_days];
    for d in 0..n_days {
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (l, &w) in weights.iter().enumerate() {
            if l > d {
                break;
            }
            acc += w * true_cumulative_log_rr(truth, national.mean[d - l]);
            wsum += w;
        }
        effect[d] = acc / wsum;
    }
    let mut strata = Vec::with_capacity(2 * scheme.n_buckets());
    for gender in Gender::BOTH {
        for bucket in 0..scheme.n_buckets() {
            let mut rng = stream(
                seed,
                Namespace::Synthetic,
                100 + (gender.index() * scheme.n_buckets() + bucket) as u64,
            );
            let base = BASE_DEATHS[gender.index()][bucket];
            let mut deaths = Vec::with_capacity(n_days);
            for d in 0..n_days {
                let date = national.dates[d];
                let season =
                    1.0 + 0.07 * (2.0 * std::f64::consts::PI * (d as f64 + 10.0) / 365.25).cos();
                let trend = (-0.004 * d as f64 / 365.25).exp();
                let dow = match date.weekday().num_days_from_monday() {
                    5 | 6 => 0.97,
                    0 => 1.02,
                    _ => 1.0,
                };
                let lambda = base * season * trend * dow * effect[d].exp();
                let draw = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
                deaths.push(draw as u32);
            }
            strata.push(DailyStratumSeries::new(
                gender,
                bucket,
                scheme.label(bucket),
                national.dates.clone(),
                deaths,
            )?);
        }
    }
    Ok(strata)
}

/// Age profile of the common mortality level: infant hump, childhood dip,
/// exponential rise.
fn common_level(age: f64) -> f64 {
    (3.0e-5 * (0.095 * age).exp() + 2.0e-4 + 3.0e-3 * (-age).exp()).ln()
}

fn normalise_loading(mut b: Vec<f64>) -> Vec<f64> {
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    b.iter_mut().for_each(|v| *v /= norm);
    b
}

fn centre(mut k: Vec<f64>) -> Vec<f64> {
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    k
}

fn make_annual(
    config: &SynthConfig,
    truth: &SyntheticTruth,
    seed: u64,
) -> Result<AnnualMortalityData, SynthError> {
    let ages: Vec<u16> = (0..=105).collect();
    let years: Vec<i32> = (config.annual_first_year..=config.calibration_last_year).collect();
    let nx = ages.len();
    let nt = years.len();
    let mid = (nt as f64 - 1.0) / 2.0;

    let a: Vec<f64> = ages.iter().map(|&x| common_level(x as f64)).collect();
    let b = normalise_loading(
        ages.iter()
            .map(|&x| 0.25 + 0.75 * (-(x as f64) / 50.0).exp())
            .collect(),
    );
    let k = centre(
        (0..nt)
            .map(|j| {
                truth.common_index_drift * (j as f64 - mid) + 0.004 * (j as f64 - mid).powi(2)
            })
            .collect(),
    );

    let beta_f = normalise_loading(
        ages.iter()
            .map(|&x| 0.5 + 0.5 * (-((x as f64 - 25.0) / 30.0).powi(2)).exp())
            .collect(),
    );
    let beta_m = normalise_loading(
        ages.iter()
            .map(|&x| 0.6 + 0.4 * (-((x as f64 - 55.0) / 35.0).powi(2)).exp())
            .collect(),
    );
    let kappa_f = centre((0..nt).map(|j| 0.6 * (j as f64 / 6.0).sin()).collect());
    let kappa_m = centre((0..nt).map(|j| 0.5 * (j as f64 / 7.5 + 1.0).sin()).collect());
    let alpha_f: Vec<f64> = ages
        .iter()
        .map(|&x| -0.14 - 0.10 * (-((x as f64 - 22.0) / 22.0).powi(2)).exp())
        .collect();
    let alpha_m: Vec<f64> = ages
        .iter()
        .map(|&x| 0.14 + 0.10 * (-((x as f64 - 22.0) / 22.0).powi(2)).exp())
        .collect();

    let build = |gender: Gender,
                 alpha: &[f64],
                 beta: &[f64],
                 kappa: &[f64]|
     -> Result<AnnualMortalitySurface, SynthError> {
        let mut rng = stream(seed, Namespace::Synthetic, 200 + gender.index() as u64);
        let mut deaths = nalgebra::DMatrix::zeros(nx, nt);
        let mut exposures = nalgebra::DMatrix::zeros(nx, nt);
        for i in 0..nx {
            for j in 0..nt {
                let e = 60_000.0
                    * (1.0 - ages[i] as f64 / 115.0).powf(1.6)
                    * (1.0 + 0.004 * (j as f64 - mid));
                let m = (a[i] + b[i] * k[j] + alpha[i] + beta[i] * kappa[j]).exp();
                let lambda = (e * m).max(1e-9);
                deaths[(i, j)] = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
                exposures[(i, j)] = e;
            }
        }
        Ok(AnnualMortalitySurface {
            ages: ages.clone(),
            years: years.clone(),
            deaths,
            exposures,
        })
    };
    Ok(AnnualMortalityData {
        female: build(Gender::Female, &alpha_f, &beta_f, &kappa_f)?,
        male: build(Gender::Male, &alpha_m, &beta_m, &kappa_m)?,
    })
}

fn make_scenarios(
    config: &SynthConfig,
    truth: &SyntheticTruth,
    seed: u64,
) -> Result<Vec<(ScenarioMeta, DailyTemperatureSeries)>, SynthError> {
    const GCMS: [&str; 4] = ["ecearth", "hadgem", "mpiesm", "cnrm"];
    const RCMS: [&str; 4] = ["rca4", "remo", "racmo", "aladin"];
    let first = config.calibration_last_year + 1;
    let last = config.scenario_last_year;
    let (start, n_days) = day_count(first, last);
    let dates: Vec<NaiveDate> = (0..n_days)
        .map(|d| start + chrono::Days::new(d as u64))
        .collect();
    let span_years = (last - first).max(1) as f64;

    let mut out = Vec::new();
    let mut stream_idx = 300u64;
    for (rcp_i, rcp) in [Rcp::Rcp26, Rcp::Rcp45, Rcp::Rcp85].into_iter().enumerate() {
        let target = truth.warming_2100[rcp.as_str()];
        for m in 0..config.models_per_rcp {
            let mut rng = stream(seed, Namespace::Synthetic, stream_idx);
            stream_idx += 1;
            let model_shift = (m as f64 - (config.models_per_rcp as f64 - 1.0) / 2.0) * 0.3;
            let mut w = 0.0;
            let mut mean = Vec::with_capacity(n_days);
            let mut min = Vec::with_capacity(n_days);
            let mut max = Vec::with_capacity(n_days);
            for d in 0..n_days {
                let frac = (d as f64 / 365.25) / span_years;
                let warming = target * frac.powf(1.2) + model_shift * frac;
                w = 0.85 * w + 2.0 * rng.sample::<f64, _>(StandardNormal);
                let mm = seasonal(d) + warming + w;
                let phase = 2.0 * std::f64::consts::PI * d as f64 / 365.25;
                mean.push(mm);
                min.push(mm - (4.2 + 1.3 * phase.sin()));
                max.push(mm + (5.1 + 1.6 * (phase + 0.8).sin()));
            }
            let meta = ScenarioMeta {
                gcm: GCMS[(rcp_i + m) % GCMS.len()].to_string(),
                rcm: RCMS[m % RCMS.len()].to_string(),
                rcp,
            };
            let label = format!("{}_{}_{}", meta.gcm, meta.rcm, rcp.as_str());
            out.push((
                meta,
                DailyTemperatureSeries::new(label, dates.clone(), min, mean, max)?,
            ));
        }
    }
    Ok(out)
}

/// Generates the full bundle from one seed.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SyntheticData, SynthError> {
    if config.calibration_first_year >= config.calibration_last_year {
        return Err(SynthError::BadConfig(
            "calibration window needs at least two years".to_string(),
        ));
    }
    if config.annual_first_year > config.calibration_first_year {
        return Err(SynthError::BadConfig(
            "annual surfaces must start at or before the calibration window".to_string(),
        ));
    }
    if config.scenario_last_year <= config.calibration_last_year {
        return Err(SynthError::BadConfig(
            "scenario years must extend past the calibration window".to_string(),
        ));
    }
    if config.n_stations == 0 || config.models_per_rcp == 0 {
        return Err(SynthError::BadConfig(
            "need at least one station and one model per pathway".to_string(),
        ));
    }
    let truth = SyntheticTruth {
        mmt: 19.0,
        cold_scale: 0.20,
        cold_width: 15.0,
        heat_scale: 0.35,
        heat_width: 12.0,
        lag_decay: 5.0,
        max_lag: 21,
        warming_2100: BTreeMap::from([
            ("rcp26".to_string(), 1.0),
            ("rcp45".to_string(), 2.2),
            ("rcp85".to_string(), 4.5),
        ]),
        common_index_drift: -0.9,
    };
    let scheme = AgeBucketScheme::default_four();
    let stations = make_stations(config, seed)?;
    let national = aggregate_stations(&stations)?;
    let strata = make_strata(&national, &truth, &scheme, seed)?;
    let annual = make_annual(config, &truth, seed)?;
    let scenarios = make_scenarios(config, &truth, seed)?;
    Ok(SyntheticData {
        stations,
        national,
        strata,
        annual,
        scenarios,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            calibration_first_year: 2010,
            calibration_last_year: 2013,
            annual_first_year: 2000,
            scenario_last_year: 2030,
            n_stations: 3,
            models_per_rcp: 2,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_config(), 42).unwrap();
        let b = generate(&small_config(), 42).unwrap();
        assert_eq!(a.national, b.national);
        assert_eq!(a.strata, b.strata);
        assert_eq!(a.annual.female.deaths, b.annual.female.deaths);
        assert_eq!(a.scenarios.len(), b.scenarios.len());
        for ((ma, sa), (mb, sb)) in a.scenarios.iter().zip(b.scenarios.iter()) {
            assert_eq!(ma, mb);
            assert_eq!(sa, sb);
        }
        let c = generate(&small_config(), 43).unwrap();
        assert_ne!(a.national.mean, c.national.mean);
    }

    #[test]
    fn national_series_is_the_station_aggregate() {
        let d = generate(&small_config(), 7).unwrap();
        let agg = aggregate_stations(&d.stations).unwrap();
        assert_eq!(d.national, agg);
        assert_eq!(d.stations.len(), 3);
    }

    #[test]
    fn strata_cover_both_genders_and_all_buckets() {
        let d = generate(&small_config(), 7).unwrap();
        assert_eq!(d.strata.len(), 8);
        for s in &d.strata {
            assert_eq!(s.dates, d.national.dates);
            let total: u64 = s.deaths.iter().map(|&v| v as u64).sum();
            let days = s.dates.len() as f64;
            let base = BASE_DEATHS[s.gender.index()][s.bucket];
            // within a loose factor of the baseline level
            assert!(
                (total as f64) > 0.6 * base * days && (total as f64) < 1.6 * base * days,
                "stratum {}/{} totals {} out of range",
                s.gender,
                s.bucket_label,
                total
            );
        }
    }

    #[test]
    fn annual_surfaces_are_positive_and_plausible() {
        let d = generate(&small_config(), 7).unwrap();
        for surface in [&d.annual.female, &d.annual.male] {
            assert_eq!(surface.ages.len(), 106);
            assert!(surface.exposures.iter().all(|&e| e > 0.0));
            // crude rate at age 80 in the middle year within a factor
            let i = 80;
            let j = surface.years.len() / 2;
            let rate = surface.deaths[(i, j)] / surface.exposures[(i, j)];
            assert!(rate > 0.01 && rate < 0.2, "implausible rate {rate}");
        }
    }

    #[test]
    fn scenarios_warm_by_pathway() {
        let config = SynthConfig {
            scenario_last_year: 2050,
            ..small_config()
        };
        let d = generate(&config, 11).unwrap();
        assert_eq!(d.scenarios.len(), 6);
        let mean_late = |s: &DailyTemperatureSeries| {
            let n = s.len();
            let tail = &s.mean[n - 1461..]; // last four years
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        let avg_by_rcp = |r: Rcp| {
            let xs: Vec<f64> = d
                .scenarios
                .iter()
                .filter(|(m, _)| m.rcp == r)
                .map(|(_, s)| mean_late(s))
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        let w26 = avg_by_rcp(Rcp::Rcp26);
        let w45 = avg_by_rcp(Rcp::Rcp45);
        let w85 = avg_by_rcp(Rcp::Rcp85);
        assert!(w45 > w26 + 0.3, "rcp45 {w45} vs rcp26 {w26}");
        assert!(w85 > w45 + 0.5, "rcp85 {w85} vs rcp45 {w45}");
    }

    #[test]
    fn truth_curve_has_its_minimum_at_the_mmt() {
        let d = generate(&small_config(), 3).unwrap();
        let t = &d.truth;
        assert_eq!(true_cumulative_log_rr(t, t.mmt), 0.0);
        assert!(true_cumulative_log_rr(t, 0.0) > 0.0);
        assert!(true_cumulative_log_rr(t, 30.0) > 0.0);
        let w = true_lag_weights(t);
        assert_eq!(w.len(), 22);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[21]);
    }

    #[test]
    fn bad_configurations_are_rejected() {
        let mut c = small_config();
        c.calibration_last_year = c.calibration_first_year;
        assert!(generate(&c, 0).is_err());
        let mut c = small_config();
        c.scenario_last_year = c.calibration_last_year;
        assert!(generate(&c, 0).is_err());
        let mut c = small_config();
        c.n_stations = 0;
        assert!(generate(&c, 0).is_err());
    }
}
