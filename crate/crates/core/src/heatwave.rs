//! Heatwave episode detection.
//!
//! A day belongs to a heatwave when the trailing three-day means of both
//! the daily minimum and the daily maximum temperature (days `d-1..d-3`;
//! the day itself excluded) strictly exceed high reference thresholds. The
//! thresholds are extreme quantiles of the minima and maxima over a fixed
//! reference window. Consecutive flagged days form episodes, summarised by
//! a severity (accumulated threshold distance of the raw temperatures) and
//! an intensity (largest single-day distances).

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::data::{DailyTemperatureSeries, DataError};

/// Quantile level of the minima/maxima used as exceedance thresholds.
pub const THRESHOLD_QUANTILE: f64 = 0.995;
/// Default reference window for the thresholds.
pub const DEFAULT_REFERENCE: (i32, i32) = (1981, 2010);
/// First index with a full three-day trailing window.
pub const TRAILING_VALID_FROM: usize = 3;

#[derive(Debug, Error)]
pub enum HeatwaveError {
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatwaveThresholds {
    /// Daily-minimum threshold.
    pub min_threshold: f64,
    /// Daily-maximum threshold.
    pub max_threshold: f64,
    /// Reference years `(first, last)` the quantiles were taken over.
    pub reference: (i32, i32),
}

/// Extreme quantiles of the observed minima and maxima over the reference
/// years, which must be covered by the series.
pub fn exceedance_thresholds(
    series: &DailyTemperatureSeries,
    first: i32,
    last: i32,
) -> Result<HeatwaveThresholds, HeatwaveError> {
    let window = series.restrict_years(first, last)?;
    Ok(HeatwaveThresholds {
        min_threshold: crate::data::empirical_quantile(&window.min, THRESHOLD_QUANTILE)?,
        max_threshold: crate::data::empirical_quantile(&window.max, THRESHOLD_QUANTILE)?,
        reference: (first, last),
    })
}

/// Trailing three-day means: entry `d` averages `values[d-3..d]`. The
/// first three entries have no full window and hold NaN.
pub fn trailing_three_day_mean(values: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; values.len()];
    for d in TRAILING_VALID_FROM..values.len() {
        out[d] = (values[d - 1] + values[d - 2] + values[d - 3]) / 3.0;
    }
    out
}

/// One maximal run of flagged days.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatwaveEpisode {
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Index of the first episode day in the series.
    pub start_index: usize,
    pub days: usize,
    /// Sum over episode days of the absolute distances of the raw minima
    /// and maxima from their thresholds.
    pub severity: f64,
    /// Largest single-day minimum distance plus largest single-day maximum
    /// distance (the maxima may occur on different days).
    pub intensity: f64,
}

/// Finds all heatwave episodes in a series given the thresholds.
pub fn detect(
    series: &DailyTemperatureSeries,
    thresholds: &HeatwaveThresholds,
) -> Vec<HeatwaveEpisode> {
    let n = series.len();
    let tm_min = trailing_three_day_mean(&series.min);
    let tm_max = trailing_three_day_mean(&series.max);
    // NaN comparisons are false, so the warm-up days are never flagged
    let flagged: Vec<bool> = (0..n)
        .map(|d| tm_min[d] > thresholds.min_threshold && tm_max[d] > thresholds.max_threshold)
        .collect();

    let mut episodes = Vec::new();
    let mut d = 0;
    while d < n {
        if !flagged[d] {
            d += 1;
            continue;
        }
        let start = d;
        while d < n && flagged[d] {
            d += 1;
        }
        let end = d; // exclusive
        let mut severity = 0.0;
        let mut worst_min = 0.0f64;
        let mut worst_max = 0.0f64;
        for i in start..end {
            let dmin = (series.min[i] - thresholds.min_threshold).abs();
            let dmax = (series.max[i] - thresholds.max_threshold).abs();
            severity += dmin + dmax;
            worst_min = worst_min.max(dmin);
            worst_max = worst_max.max(dmax);
        }
        episodes.push(HeatwaveEpisode {
            start: series.dates[start],
            end: series.dates[end - 1],
            start_index: start,
            days: end - start,
            severity,
            intensity: worst_min + worst_max,
        });
    }
    episodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn series_from(min: Vec<f64>, max: Vec<f64>, first: NaiveDate) -> DailyTemperatureSeries {
        let n = min.len();
        let dates: Vec<NaiveDate> = (0..n).map(|i| first + chrono::Days::new(i as u64)).collect();
        let mean: Vec<f64> = min.iter().zip(max.iter()).map(|(a, b)| (a + b) / 2.0).collect();
        DailyTemperatureSeries::new("t".to_string(), dates, min, mean, max).unwrap()
    }

    #[test]
    fn threshold_quantile_interpolates_near_the_top() {
        let first = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        // the leap year 2000 in full; minima 1..=366
        let min: Vec<f64> = (1..=366).map(|v| v as f64).collect();
        let max: Vec<f64> = min.iter().map(|v| v + 10.0).collect();
        let s = series_from(min, max, first);
        let thr = exceedance_thresholds(&s, 2000, 2000).unwrap();
        // position 365 * 0.995 = 363.175 between order statistics 364, 365
        assert_abs_diff_eq!(thr.min_threshold, 364.175, epsilon = 1e-10);
        assert_abs_diff_eq!(thr.max_threshold, 374.175, epsilon = 1e-10);
        assert_eq!(thr.reference, (2000, 2000));
    }

    #[test]
    fn reference_window_excludes_later_years() {
        let first = NaiveDate::from_ymd_opt(2009, 1, 1).unwrap();
        let n = 365 + 365; // 2009 plus 2010
        let mut min = vec![5.0; n];
        let mut max = vec![15.0; n];
        // extreme week in 2010, outside a 2009-only reference but wide
        // enough to pull the 0.995 quantile of the two-year window up
        for d in 400..=404 {
            min[d] = 30.0;
            max[d] = 45.0;
        }
        let s = series_from(min, max, first);
        let thr_2009 = exceedance_thresholds(&s, 2009, 2009).unwrap();
        assert_eq!(thr_2009.min_threshold, 5.0);
        let thr_both = exceedance_thresholds(&s, 2009, 2010).unwrap();
        assert!(thr_both.min_threshold > 5.0);
    }

    #[test]
    fn trailing_mean_excludes_the_day_itself() {
        let v = vec![1.0, 2.0, 3.0, 100.0, 4.0];
        let tm = trailing_three_day_mean(&v);
        assert!(tm[0].is_nan() && tm[1].is_nan() && tm[2].is_nan());
        assert_abs_diff_eq!(tm[3], 2.0, epsilon = 1e-15); // (1+2+3)/3
        assert_abs_diff_eq!(tm[4], 35.0, epsilon = 1e-15); // (2+3+100)/3
    }

    /// A week of hot weather flags exactly five days: flagging lags the
    /// heat by the trailing window, and a boundary day whose mean equals
    /// the threshold stays out because exceedance is strict.
    #[test]
    fn constructed_episode_has_known_extent_and_scores() {
        let first = NaiveDate::from_ymd_opt(2003, 7, 1).unwrap();
        let n = 40;
        let mut min = vec![0.0; n];
        let mut max = vec![15.0; n];
        for d in 10..=16 {
            min[d] = 15.0;
            max[d] = 30.0;
        }
        let s = series_from(min, max, first);
        let thr = HeatwaveThresholds {
            min_threshold: 12.0,
            max_threshold: 25.0,
            reference: (1981, 2010),
        };
        let eps = detect(&s, &thr);
        assert_eq!(eps.len(), 1);
        let e = &eps[0];
        assert_eq!(e.start_index, 13);
        assert_eq!(e.days, 5);
        assert_eq!(e.start, first + chrono::Days::new(13));
        assert_eq!(e.end, first + chrono::Days::new(17));
        // four hot days contribute |15-12| + |30-25| = 8 each; day 17 is
        // already cool again and contributes |0-12| + |15-25| = 22
        assert_abs_diff_eq!(e.severity, 54.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.intensity, 12.0 + 10.0, epsilon = 1e-12);
    }

    /// An episode whose only day sits exactly on both thresholds scores
    /// zero severity and intensity.
    #[test]
    fn single_day_at_the_thresholds_scores_zero() {
        let first = NaiveDate::from_ymd_opt(2006, 6, 1).unwrap();
        let n = 40;
        let mut min = vec![0.0; n];
        let mut max = vec![15.0; n];
        for d in 36..=38 {
            min[d] = 15.0;
            max[d] = 30.0;
        }
        min[39] = 12.0;
        max[39] = 25.0;
        let s = series_from(min, max, first);
        let thr = HeatwaveThresholds {
            min_threshold: 12.0,
            max_threshold: 25.0,
            reference: (1981, 2010),
        };
        let eps = detect(&s, &thr);
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].days, 1);
        assert_eq!(eps[0].start_index, 39);
        assert_eq!(eps[0].severity, 0.0);
        assert_eq!(eps[0].intensity, 0.0);
    }

    #[test]
    fn both_conditions_must_hold() {
        let first = NaiveDate::from_ymd_opt(2006, 6, 1).unwrap();
        let n = 20;
        let mut min = vec![0.0; n];
        let max = vec![15.0; n]; // maxima never exceed their threshold
        for d in 5..=10 {
            min[d] = 14.0;
        }
        let s = series_from(min, max, first);
        let thr = HeatwaveThresholds {
            min_threshold: 12.0,
            max_threshold: 25.0,
            reference: (1981, 2010),
        };
        assert!(detect(&s, &thr).is_empty());
    }

    #[test]
    fn calm_series_has_no_episodes() {
        let first = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        let s = series_from(vec![2.0; 30], vec![12.0; 30], first);
        let thr = HeatwaveThresholds {
            min_threshold: 12.0,
            max_threshold: 25.0,
            reference: (1981, 2010),
        };
        assert!(detect(&s, &thr).is_empty());
    }
}
