//! Temperature-attributable deaths and death fractions.
//!
//! Given a fitted cumulative response curve, each day contributes
//! `(1 - exp(-g)) * deaths` attributable deaths looking backward, or
//! `exp(g) - 1` per unit of day weight looking forward, where `g` is the
//! cumulative log relative risk at that day's mean temperature versus the
//! minimum-mortality temperature. Days are partitioned into cold/heat
//! classes by the calibration 2.5th/97.5th percentiles, and the resulting
//! fractions feed the exposure adjustment applied to projected death rates.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use nalgebra::DVector;
use thiserror::Error;

use crate::basis::{BasisError, CrossBasisDef};
use crate::dlnm::TemperatureQuantiles;

#[derive(Debug, Error)]
pub enum AttrError {
    #[error("lengths differ: {what} has {got}, expected {want}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        want: usize,
    },
    #[error("day weights sum to {sum}, expected 1")]
    WeightsNotNormalised { sum: f64 },
    #[error("day weight at index {index} is negative or non-finite")]
    BadWeight { index: usize },
    #[error("attributable fraction {theta} is at or below -1; exposure adjustment undefined")]
    FractionOutOfRange { theta: f64 },
    #[error("no deaths in the selected period; fraction undefined")]
    NoDeaths,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Temperature class of a day relative to the minimum-mortality temperature
/// and the calibration extremity cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DayClass {
    ExtremeCold,
    ModerateCold,
    /// Exactly at the minimum-mortality temperature; contributes nothing.
    None,
    ModerateHot,
    ExtremeHot,
}

impl DayClass {
    pub const ALL: [DayClass; 5] = [
        DayClass::ExtremeCold,
        DayClass::ModerateCold,
        DayClass::None,
        DayClass::ModerateHot,
        DayClass::ExtremeHot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DayClass::ExtremeCold => "extreme_cold",
            DayClass::ModerateCold => "moderate_cold",
            DayClass::None => "none",
            DayClass::ModerateHot => "moderate_hot",
            DayClass::ExtremeHot => "extreme_hot",
        }
    }

    pub fn parse(s: &str) -> Option<DayClass> {
        DayClass::ALL.iter().copied().find(|c| c.as_str() == s)
    }
}

/// Classifies each day by its mean temperature. Rules apply in order:
/// below the 2.5th percentile is extreme cold; otherwise below the
/// minimum-mortality temperature is moderate cold; exactly at it, none; at
/// or below the 97.5th percentile, moderate heat; above, extreme heat.
pub fn classify_days(
    mean_temps: &[f64],
    mmt: f64,
    quantiles: &TemperatureQuantiles,
) -> Vec<DayClass> {
    mean_temps
        .iter()
        .map(|&t| {
            if t < quantiles.p025 {
                DayClass::ExtremeCold
            } else if t < mmt {
                DayClass::ModerateCold
            } else if t == mmt {
                DayClass::None
            } else if t <= quantiles.p975 {
                DayClass::ModerateHot
            } else {
                DayClass::ExtremeHot
            }
        })
        .collect()
}

/// Which days enter an attribution sum.
#[derive(Debug, Clone)]
pub enum DaySelection {
    All,
    Class(DayClass),
    Dates(BTreeSet<NaiveDate>),
}

pub fn day_mask(
    selection: &DaySelection,
    dates: &[NaiveDate],
    classes: &[DayClass],
) -> Result<Vec<bool>, AttrError> {
    if classes.len() != dates.len() {
        return Err(AttrError::LengthMismatch {
            what: "classes",
            got: classes.len(),
            want: dates.len(),
        });
    }
    Ok(match selection {
        DaySelection::All => vec![true; dates.len()],
        DaySelection::Class(c) => classes.iter().map(|k| k == c).collect(),
        DaySelection::Dates(set) => dates.iter().map(|d| set.contains(d)).collect(),
    })
}

/// Cumulative log relative risk for each day's mean temperature versus the
/// minimum-mortality temperature.
pub fn log_rr_series(
    def: &CrossBasisDef,
    cross_coef: &DVector<f64>,
    mmt: f64,
    mean_temps: &[f64],
) -> Result<Vec<f64>, AttrError> {
    Ok(def.cumulative_curve(cross_coef, mean_temps, mmt)?)
}

/// Backward-attributed deaths over a day selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardAttribution {
    /// Deaths over all days of the period (the fraction denominator).
    pub total_deaths: f64,
    /// Attributable deaths summed over the selected days.
    pub attributed: f64,
    /// `attributed / total_deaths`.
    pub fraction: f64,
}

/// Sums `(1 - exp(-g_d)) * deaths_d` over the masked days. The denominator
/// is deaths over the whole slice regardless of the mask, so fractions for
/// a partition of the days add up to the all-days fraction exactly.
pub fn backward_attribution(
    log_rr: &[f64],
    deaths: &[f64],
    mask: &[bool],
) -> Result<BackwardAttribution, AttrError> {
    if deaths.len() != log_rr.len() {
        return Err(AttrError::LengthMismatch {
            what: "deaths",
            got: deaths.len(),
            want: log_rr.len(),
        });
    }
    if mask.len() != log_rr.len() {
        return Err(AttrError::LengthMismatch {
            what: "mask",
            got: mask.len(),
            want: log_rr.len(),
        });
    }
    let total_deaths: f64 = deaths.iter().sum();
    if total_deaths <= 0.0 {
        return Err(AttrError::NoDeaths);
    }
    let mut attributed = 0.0;
    for i in 0..log_rr.len() {
        if mask[i] {
            attributed += (1.0 - (-log_rr[i]).exp()) * deaths[i];
        }
    }
    Ok(BackwardAttribution {
        total_deaths,
        attributed,
        fraction: attributed / total_deaths,
    })
}

/// Equal weights within each calendar year: day `d` of a year with `n`
/// recorded days gets `1/n`, so the weights of every complete year sum
/// to one.
pub fn uniform_year_weights(dates: &[NaiveDate]) -> Vec<f64> {
    let mut counts = std::collections::BTreeMap::new();
    for d in dates {
        *counts.entry(d.year()).or_insert(0usize) += 1;
    }
    dates
        .iter()
        .map(|d| 1.0 / counts[&d.year()] as f64)
        .collect()
}

/// Forward-looking attributable death fraction for the selected days of a
/// single year: `sum_d w_d (exp(g_d) - 1)` over the mask. The weights must
/// cover the whole slice and sum to one.
pub fn forward_attribution(
    log_rr: &[f64],
    weights: &[f64],
    mask: &[bool],
) -> Result<f64, AttrError> {
    if weights.len() != log_rr.len() {
        return Err(AttrError::LengthMismatch {
            what: "weights",
            got: weights.len(),
            want: log_rr.len(),
        });
    }
    if mask.len() != log_rr.len() {
        return Err(AttrError::LengthMismatch {
            what: "mask",
            got: mask.len(),
            want: log_rr.len(),
        });
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(AttrError::BadWeight { index });
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(AttrError::WeightsNotNormalised { sum });
    }
    let mut theta = 0.0;
    for i in 0..log_rr.len() {
        if mask[i] {
            theta += weights[i] * (log_rr[i].exp() - 1.0);
        }
    }
    Ok(theta)
}

/// Multiplier `1 + theta` applied to baseline death rates. Fractions at or
/// below -1 would flip the sign of a rate and are rejected.
pub fn exposure_adjustment(theta: f64) -> Result<f64, AttrError> {
    if !theta.is_finite() || theta <= -1.0 {
        return Err(AttrError::FractionOutOfRange { theta });
    }
    Ok(1.0 + theta)
}
