//! Distributed-lag temperature-mortality regression.
//!
//! For each gender and age-bucket stratum, daily death counts are regressed
//! on a lagged tensor-product basis of daily mean temperature (capturing
//! both the shape of the temperature response and its distribution over the
//! following three weeks), a long-term seasonality/trend spline in the day
//! index, and day-of-week indicators. The fitted cumulative response curve
//! yields the minimum-mortality temperature and relative risks; coefficient
//! draws from the estimated sampling distribution propagate uncertainty
//! into everything downstream.

use std::ops::Range;
use std::path::Path;

use chrono::Datelike;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, CrossBasis, CrossBasisDef, CrossBasisSpec, SplineSpec};
use crate::data::{
    check_same_axis, quantile_of_sorted, DailyStratumSeries, DailyTemperatureSeries, DataError,
    Gender,
};
use crate::glm::{fit_poisson_irls, GlmError};
use crate::rng::{stream, Namespace};

#[derive(Debug, Error)]
pub enum DlnmError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("regression for stratum {gender}/{label} failed: {source}")]
    FitFailed {
        gender: &'static str,
        label: String,
        source: GlmError,
    },
    #[error("no death strata supplied")]
    EmptyStrata,
    #[error("knot quantiles must be strictly increasing within (0, 1), got {0:?}")]
    BadKnotQuantiles(Vec<f64>),
    #[error("calibration temperatures are all equal; cannot place spline knots")]
    DegenerateTemperatures,
    #[error("coefficient covariance is not positive semidefinite (eigenvalue {min_eig:.3e})")]
    NotPositiveSemidefinite { min_eig: f64 },
    #[error("model file error: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Tuning knobs for the regression. The defaults match the headline
/// analysis: a 21-day lag window, temperature knots at the 10th/75th/90th
/// percentiles, three log-spaced lag knots, eight seasonality degrees of
/// freedom per year, and day-of-week adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DlnmConfig {
    pub max_lag: usize,
    pub var_knot_quantiles: Vec<f64>,
    pub n_lag_knots: usize,
    pub time_df_per_year: usize,
    pub day_of_week: bool,
}

impl Default for DlnmConfig {
    fn default() -> Self {
        Self {
            max_lag: 21,
            var_knot_quantiles: vec![0.10, 0.75, 0.90],
            n_lag_knots: 3,
            time_df_per_year: 8,
            day_of_week: true,
        }
    }
}

/// Calibration-period summaries of daily mean temperature reused throughout
/// the pipeline: spline boundaries, the search range for the minimum of the
/// risk curve, and the cold/heat extremity cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureQuantiles {
    pub min: f64,
    pub max: f64,
    pub p01: f64,
    pub p025: f64,
    pub p10: f64,
    pub p75: f64,
    pub p90: f64,
    pub p975: f64,
    pub p99: f64,
}

pub fn temperature_quantiles(mean_temps: &[f64]) -> Result<TemperatureQuantiles, DlnmError> {
    let mut sorted = mean_temps.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite temperatures"));
    let q = |p: f64| quantile_of_sorted(&sorted, p);
    Ok(TemperatureQuantiles {
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        p01: q(0.01)?,
        p025: q(0.025)?,
        p10: q(0.10)?,
        p75: q(0.75)?,
        p90: q(0.90)?,
        p975: q(0.975)?,
        p99: q(0.99)?,
    })
}

/// Temperature spline for the lagged basis: no intercept, boundary at the
/// observed extremes, interior knots at the configured quantiles.
pub fn var_spline_spec(
    mean_temps: &[f64],
    config: &DlnmConfig,
) -> Result<SplineSpec, DlnmError> {
    let qs = &config.var_knot_quantiles;
    if qs.is_empty()
        || qs.windows(2).any(|w| !(w[0] < w[1]))
        || qs.iter().any(|&p| !(0.0 < p && p < 1.0))
    {
        return Err(DlnmError::BadKnotQuantiles(qs.clone()));
    }
    let mut sorted = mean_temps.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite temperatures"));
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    if !(lo < hi) {
        return Err(DlnmError::DegenerateTemperatures);
    }
    let knots: Vec<f64> = qs
        .iter()
        .map(|&p| quantile_of_sorted(&sorted, p))
        .collect::<Result<_, _>>()?;
    // quantile ties collapse onto the boundary only for degenerate data;
    // surface those as a knot error rather than silently dropping knots
    Ok(SplineSpec::new(knots, (lo, hi), false)?)
}

/// The assembled regression design over the full daily axis.
///
/// Column layout: intercept, then the lagged temperature basis, then the
/// seasonality/trend spline, then day-of-week indicators (Tuesday through
/// Sunday; Monday is the reference). The first `valid_from` rows carry NaN
/// in the lagged block and are excluded from fitting.
pub struct DesignInfo {
    pub matrix: DMatrix<f64>,
    pub valid_from: usize,
    pub cross_cols: Range<usize>,
}

pub fn build_design(
    temps: &DailyTemperatureSeries,
    config: &DlnmConfig,
    cross: &CrossBasis,
) -> Result<DesignInfo, DlnmError> {
    let n = temps.len();
    let cross_dim = cross.matrix.ncols();

    // seasonality and trend: natural spline of the day index, one basis
    // column per degree of freedom, knots evenly spaced over the index range
    let n_years = {
        let first = temps.first_date().year();
        let last = temps.last_date().year();
        (last - first + 1) as usize
    };
    let df = config.time_df_per_year * n_years;
    if df < 2 {
        return Err(DlnmError::ModelFile(format!(
            "seasonality spline needs at least 2 degrees of freedom, got {df}"
        )));
    }
    let idx: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let knots: Vec<f64> = (1..df).map(|i| i as f64 / df as f64 * (n - 1) as f64).collect();
    let time_spec = SplineSpec::new(knots, (0.0, (n - 1) as f64), false)?;
    let time_basis = crate::basis::NaturalBasis::new(time_spec)?;
    let time_cols = time_basis.design(&idx)?;
    debug_assert_eq!(time_cols.ncols(), df);

    let n_dow = if config.day_of_week { 6 } else { 0 };
    let p = 1 + cross_dim + df + n_dow;
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        m[(i, 0)] = 1.0;
        for j in 0..cross_dim {
            m[(i, 1 + j)] = cross.matrix[(i, j)];
        }
        for j in 0..df {
            m[(i, 1 + cross_dim + j)] = time_cols[(i, j)];
        }
        if config.day_of_week {
            let wd = temps.dates[i].weekday().num_days_from_monday() as usize;
            if wd >= 1 {
                m[(i, 1 + cross_dim + df + wd - 1)] = 1.0;
            }
        }
    }
    Ok(DesignInfo {
        matrix: m,
        valid_from: cross.valid_from,
        cross_cols: 1..1 + cross_dim,
    })
}

/// Fitted regression for one gender/age-bucket stratum.
#[derive(Debug, Clone)]
pub struct StratumFit {
    pub gender: Gender,
    pub bucket: usize,
    pub bucket_label: String,
    /// Full coefficient vector over the design columns.
    pub coefficients: DVector<f64>,
    /// Full dispersion-scaled covariance.
    pub covariance: DMatrix<f64>,
    pub cross_cols: Range<usize>,
    pub dispersion: f64,
    pub deviance: f64,
    pub n_obs: usize,
    /// Minimum-mortality temperature from the cumulative response curve.
    pub mmt: f64,
}

impl StratumFit {
    pub fn cross_coefficients(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.cross_cols.len(),
            self.cross_cols.clone().map(|j| self.coefficients[j]),
        )
    }

    pub fn cross_covariance(&self) -> DMatrix<f64> {
        let r = self.cross_cols.clone();
        let k = r.len();
        DMatrix::from_fn(k, k, |i, j| self.covariance[(r.start + i, r.start + j)])
    }
}

/// The full fitted model: shared basis definition and quantiles plus one
/// fit per stratum.
#[derive(Debug, Clone)]
pub struct DlnmModel {
    pub config: DlnmConfig,
    pub quantiles: TemperatureQuantiles,
    pub def: CrossBasisDef,
    pub strata: Vec<StratumFit>,
}

impl DlnmModel {
    pub fn stratum(&self, gender: Gender, bucket: usize) -> Option<&StratumFit> {
        self.strata
            .iter()
            .find(|s| s.gender == gender && s.bucket == bucket)
    }
}

/// Fits every stratum against the shared temperature design.
///
/// All strata must share the temperature date axis. Fits run in parallel;
/// any failure aborts with the offending stratum named.
pub fn fit(
    temps: &DailyTemperatureSeries,
    strata: &[DailyStratumSeries],
    config: &DlnmConfig,
) -> Result<DlnmModel, DlnmError> {
    if strata.is_empty() {
        return Err(DlnmError::EmptyStrata);
    }
    for s in strata {
        check_same_axis("death series vs temperature series", &s.dates, &temps.dates)?;
    }
    let quantiles = temperature_quantiles(&temps.mean)?;
    let var = var_spline_spec(&temps.mean, config)?;
    let spec = CrossBasisSpec::with_log_lag_knots(var, config.max_lag, config.n_lag_knots)?;
    let def = CrossBasisDef::new(spec)?;
    let cross = def.build(&temps.mean)?;
    let design = build_design(temps, config, &cross)?;

    let n = temps.len();
    let skip = design.valid_from;
    let x = design.matrix.rows(skip, n - skip).into_owned();
    let offset = vec![0.0; n - skip];

    let fits: Result<Vec<StratumFit>, DlnmError> = strata
        .par_iter()
        .map(|s| {
            let counts: Vec<f64> = s.deaths[skip..].iter().map(|&d| d as f64).collect();
            let glm = fit_poisson_irls(&x, &counts, &offset).map_err(|source| {
                DlnmError::FitFailed {
                    gender: s.gender.code(),
                    label: s.bucket_label.clone(),
                    source,
                }
            })?;
            let cross_coef = DVector::from_iterator(
                design.cross_cols.len(),
                design.cross_cols.clone().map(|j| glm.coefficients[j]),
            );
            let mmt = find_mmt(&def, &cross_coef, &quantiles)?;
            Ok(StratumFit {
                gender: s.gender,
                bucket: s.bucket,
                bucket_label: s.bucket_label.clone(),
                coefficients: glm.coefficients,
                covariance: glm.covariance,
                cross_cols: design.cross_cols.clone(),
                dispersion: glm.dispersion,
                deviance: glm.deviance,
                n_obs: glm.n_obs,
                mmt,
            })
        })
        .collect();

    Ok(DlnmModel {
        config: config.clone(),
        quantiles,
        def,
        strata: fits?,
    })
}

/// Minimum of the cumulative response curve on a 0.1 degree grid spanning
/// the 1st to 99th calibration percentiles. Ties resolve toward the lower
/// temperature.
pub fn find_mmt(
    def: &CrossBasisDef,
    cross_coef: &DVector<f64>,
    quantiles: &TemperatureQuantiles,
) -> Result<f64, DlnmError> {
    let lo = quantiles.p01;
    let hi = quantiles.p99;
    let steps = ((hi - lo) / 0.1).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * 0.1).collect();
    let curve = def.cumulative_curve(cross_coef, &grid, lo)?;
    let mut best = 0;
    for (i, &g) in curve.iter().enumerate() {
        if g < curve[best] {
            best = i;
        }
    }
    Ok(grid[best])
}

/// One point of the cumulative exposure-response summary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RiskPoint {
    pub temperature: f64,
    pub log_rr: f64,
    pub se: f64,
    pub rr: f64,
    pub rr_low: f64,
    pub rr_high: f64,
}

/// Cumulative relative risks versus the minimum-mortality temperature, with
/// normal-approximation 95 percent intervals from the coefficient
/// covariance. At the reference itself the risk is exactly 1 with zero
/// width.
pub fn relative_risk(
    def: &CrossBasisDef,
    cross_coef: &DVector<f64>,
    cross_cov: &DMatrix<f64>,
    mmt: f64,
    temperatures: &[f64],
) -> Result<Vec<RiskPoint>, DlnmError> {
    if cross_coef.len() != def.dim() {
        return Err(DlnmError::Basis(BasisError::CoefficientLength {
            got: cross_coef.len(),
            want: def.dim(),
        }));
    }
    let mut out = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        let a = def.cumulative_contrast(t, mmt);
        let g = a.dot(cross_coef);
        let var = (cross_cov * &a).dot(&a);
        let se = var.max(0.0).sqrt();
        out.push(RiskPoint {
            temperature: t,
            log_rr: g,
            se,
            rr: g.exp(),
            rr_low: (g - 1.96 * se).exp(),
            rr_high: (g + 1.96 * se).exp(),
        });
    }
    Ok(out)
}

/// Multivariate-normal draws of the lagged-basis coefficients.
///
/// The covariance is factored through its symmetric eigendecomposition;
/// tiny negative eigenvalues from rounding are clamped to zero, so a zero
/// covariance returns the mean itself in every draw. Draw `i` always comes
/// from stream `stream_base + i`, independent of how many draws are
/// requested; distinct strata should pass distinct bases so their draws
/// are independent.
pub fn sample_cross_coefficients(
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    n_draws: usize,
    root_seed: u64,
    stream_base: u64,
) -> Result<Vec<DVector<f64>>, DlnmError> {
    let p = mean.len();
    assert_eq!(covariance.nrows(), p, "covariance shape");
    assert_eq!(covariance.ncols(), p, "covariance shape");
    let sym = covariance.clone().symmetric_eigen();
    let max_eig = sym.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let tol = 1e-8 * max_eig.max(1e-300);
    let mut scaled = sym.eigenvectors.clone();
    for (j, &lambda) in sym.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return Err(DlnmError::NotPositiveSemidefinite { min_eig: lambda });
        }
        let s = lambda.max(0.0).sqrt();
        for i in 0..p {
            scaled[(i, j)] *= s;
        }
    }
    let mut draws = Vec::with_capacity(n_draws);
    for i in 0..n_draws {
        let mut rng = stream(root_seed, Namespace::CoefficientDraws, stream_base + i as u64);
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        draws.push(mean + &scaled * z);
    }
    Ok(draws)
}

// -- persistence --------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StratumFitFile {
    gender: String,
    bucket: usize,
    bucket_label: String,
    coefficients: Vec<f64>,
    covariance_row_major: Vec<f64>,
    cross_start: usize,
    cross_len: usize,
    dispersion: f64,
    deviance: f64,
    n_obs: usize,
    mmt: f64,
}

#[derive(Serialize, Deserialize)]
struct DlnmModelFile {
    config: DlnmConfig,
    quantiles: TemperatureQuantiles,
    cross_spec: CrossBasisSpec,
    strata: Vec<StratumFitFile>,
}

impl DlnmModel {
    pub fn to_json(&self) -> Result<String, DlnmError> {
        let file = DlnmModelFile {
            config: self.config.clone(),
            quantiles: self.quantiles,
            cross_spec: self.def.spec().clone(),
            strata: self
                .strata
                .iter()
                .map(|s| StratumFitFile {
                    gender: s.gender.code().to_string(),
                    bucket: s.bucket,
                    bucket_label: s.bucket_label.clone(),
                    coefficients: s.coefficients.iter().copied().collect(),
                    covariance_row_major: (0..s.covariance.nrows())
                        .flat_map(|i| {
                            (0..s.covariance.ncols()).map(move |j| (i, j))
                        })
                        .map(|(i, j)| s.covariance[(i, j)])
                        .collect(),
                    cross_start: s.cross_cols.start,
                    cross_len: s.cross_cols.len(),
                    dispersion: s.dispersion,
                    deviance: s.deviance,
                    n_obs: s.n_obs,
                    mmt: s.mmt,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DlnmError> {
        let file: DlnmModelFile = serde_json::from_str(text)?;
        let def = CrossBasisDef::new(file.cross_spec)?;
        let mut strata = Vec::with_capacity(file.strata.len());
        for s in file.strata {
            let gender = Gender::parse(&s.gender)
                .ok_or_else(|| DlnmError::ModelFile(format!("bad gender {:?}", s.gender)))?;
            let p = s.coefficients.len();
            if s.covariance_row_major.len() != p * p {
                return Err(DlnmError::ModelFile(format!(
                    "covariance for {}/{} has {} entries, expected {}",
                    s.gender,
                    s.bucket_label,
                    s.covariance_row_major.len(),
                    p * p
                )));
            }
            if s.cross_start + s.cross_len > p || s.cross_len != def.dim() {
                return Err(DlnmError::ModelFile(format!(
                    "lagged-basis column range {}..{} inconsistent with {} coefficients",
                    s.cross_start,
                    s.cross_start + s.cross_len,
                    p
                )));
            }
            strata.push(StratumFit {
                gender,
                bucket: s.bucket,
                bucket_label: s.bucket_label,
                coefficients: DVector::from_vec(s.coefficients),
                covariance: DMatrix::from_fn(p, p, |i, j| s.covariance_row_major[i * p + j]),
                cross_cols: s.cross_start..s.cross_start + s.cross_len,
                dispersion: s.dispersion,
                deviance: s.deviance,
                n_obs: s.n_obs,
                mmt: s.mmt,
            });
        }
        Ok(DlnmModel {
            config: file.config,
            quantiles: file.quantiles,
            def,
            strata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DlnmError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DlnmError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
