//! Two-population stochastic mortality model.
//!
//! Log death rates decompose into a shared bilinear structure plus a
//! gender-specific one:
//!
//! ```text
//! ln m_g(x, t) = A(x) + B(x) K(t) + alpha_g(x) + beta_g(x) kappa_g(t)
//! ```
//!
//! Estimation is conditional Poisson maximum likelihood in two steps: the
//! common surface `A + B K` is fitted to pooled deaths against pooled
//! (optionally temperature-adjusted) exposures, then each gender's
//! deviation `alpha + beta kappa` is fitted with the common surface held
//! fixed as an offset. Each step alternates exact level updates with
//! one-dimensional Newton steps for the loadings and indices, renormalising
//! every sweep so the factors stay identified: indices sum to zero,
//! loadings have unit sum of squares and non-negative sum.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AnnualMortalityData, Gender};

#[derive(Debug, Error)]
pub enum LiLeeError {
    #[error("{what} has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    ShapeMismatch {
        what: &'static str,
        got_rows: usize,
        got_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{what} at ({row}, {col}) is invalid: {value}")]
    BadValue {
        what: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("{context}: age row {index} has no deaths; its level is unidentified")]
    ZeroDeathRow { context: &'static str, index: usize },
    #[error("{context}: year column {index} has no deaths; its index is unidentified")]
    ZeroDeathColumn { context: &'static str, index: usize },
    #[error("{context}: no convergence after {sweeps} sweeps (relative deviance change {rel_change:.3e})")]
    NotConverged {
        context: &'static str,
        sweeps: usize,
        rel_change: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Level, loading and period index of one bilinear component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    /// Age-specific level (`A` or `alpha`).
    pub level: Vec<f64>,
    /// Age-specific loading (`B` or `beta`), unit sum of squares.
    pub loading: Vec<f64>,
    /// Period index (`K` or `kappa`), sums to zero.
    pub index: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative deviance change that counts as converged.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 10_000,
        }
    }
}

/// Multiplicative exposure adjustments (one factor per age and year, per
/// gender), typically `1 + theta` from the attribution stage.
#[derive(Debug, Clone)]
pub struct ExposureAdjustment {
    pub female: DMatrix<f64>,
    pub male: DMatrix<f64>,
}

/// The complete fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiLeeFit {
    pub ages: Vec<u16>,
    pub years: Vec<i32>,
    pub common: Factors,
    pub female: Factors,
    pub male: Factors,
    pub common_deviance: f64,
    pub female_deviance: f64,
    pub male_deviance: f64,
    pub common_sweeps: usize,
    pub female_sweeps: usize,
    pub male_sweeps: usize,
}

impl LiLeeFit {
    pub fn gender(&self, gender: Gender) -> &Factors {
        match gender {
            Gender::Female => &self.female,
            Gender::Male => &self.male,
        }
    }

    /// `ln m_g(x, t)` for age row `i` and year column `j`.
    pub fn log_rate(&self, gender: Gender, i: usize, j: usize) -> f64 {
        let g = self.gender(gender);
        self.common.level[i]
            + self.common.loading[i] * self.common.index[j]
            + g.level[i]
            + g.loading[i] * g.index[j]
    }

    /// Fitted death-rate surface for one gender.
    pub fn rate_surface(&self, gender: Gender) -> DMatrix<f64> {
        DMatrix::from_fn(self.ages.len(), self.years.len(), |i, j| {
            self.log_rate(gender, i, j).exp()
        })
    }

    /// How far the identification constraints are from holding exactly.
    pub fn constraint_residuals(&self) -> ConstraintResiduals {
        fn index_sum(f: &Factors) -> f64 {
            f.index.iter().sum::<f64>().abs()
        }
        fn loading_norm_err(f: &Factors) -> f64 {
            (f.loading.iter().map(|b| b * b).sum::<f64>() - 1.0).abs()
        }
        ConstraintResiduals {
            common_index_sum: index_sum(&self.common),
            common_loading_norm: loading_norm_err(&self.common),
            female_index_sum: index_sum(&self.female),
            female_loading_norm: loading_norm_err(&self.female),
            male_index_sum: index_sum(&self.male),
            male_loading_norm: loading_norm_err(&self.male),
        }
    }

    pub fn to_json(&self) -> Result<String, LiLeeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, LiLeeError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), LiLeeError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LiLeeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstraintResiduals {
    pub common_index_sum: f64,
    pub common_loading_norm: f64,
    pub female_index_sum: f64,
    pub female_loading_norm: f64,
    pub male_index_sum: f64,
    pub male_loading_norm: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        [
            self.common_index_sum,
            self.common_loading_norm,
            self.female_index_sum,
            self.female_loading_norm,
            self.male_index_sum,
            self.male_loading_norm,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn poisson_deviance(deaths: &DMatrix<f64>, means: &DMatrix<f64>) -> f64 {
    let mut dev = 0.0;
    for (d, m) in deaths.iter().zip(means.iter()) {
        if *d > 0.0 {
            dev += 2.0 * (d * (d / m).ln() - (d - m));
        } else {
            dev += 2.0 * m;
        }
    }
    dev
}

#[derive(Debug)]
struct BilinearFit {
    factors: Factors,
    deviance: f64,
    sweeps: usize,
}

/// Alternating conditional Poisson fit of
/// `D(x, t) ~ Poisson(E(x, t) * exp(offset(x, t) + a_x + b_x k_t))`.
fn fit_bilinear(
    context: &'static str,
    deaths: &DMatrix<f64>,
    exposures: &DMatrix<f64>,
    offset: &DMatrix<f64>,
    options: &FitOptions,
) -> Result<BilinearFit, LiLeeError> {
    let (nx, nt) = deaths.shape();
    for i in 0..nx {
        if (0..nt).map(|j| deaths[(i, j)]).sum::<f64>() <= 0.0 {
            return Err(LiLeeError::ZeroDeathRow { context, index: i });
        }
    }
    for j in 0..nt {
        if (0..nx).map(|i| deaths[(i, j)]).sum::<f64>() <= 0.0 {
            return Err(LiLeeError::ZeroDeathColumn { context, index: j });
        }
    }

    // start at the marginal levels with a flat loading and zero index
    let mut a = vec![0.0; nx];
    let mut b = vec![1.0 / (nx as f64).sqrt(); nx];
    let mut k = vec![0.0; nt];
    for i in 0..nx {
        let d: f64 = (0..nt).map(|j| deaths[(i, j)]).sum();
        let e: f64 = (0..nt).map(|j| exposures[(i, j)] * offset[(i, j)].exp()).sum();
        a[i] = (d / e).ln();
    }

    let means = |a: &[f64], b: &[f64], k: &[f64]| {
        DMatrix::from_fn(nx, nt, |i, j| {
            exposures[(i, j)] * (offset[(i, j)] + a[i] + b[i] * k[j]).exp()
        })
    };
    let mut deviance = poisson_deviance(deaths, &means(&a, &b, &k));
    let mut rel = f64::INFINITY;

    for sweep in 1..=options.max_sweeps {
        // exact level update: a_i = ln(sum_j D / sum_j E e^{off + b k})
        for i in 0..nx {
            let d: f64 = (0..nt).map(|j| deaths[(i, j)]).sum();
            let e: f64 = (0..nt)
                .map(|j| exposures[(i, j)] * (offset[(i, j)] + b[i] * k[j]).exp())
                .sum();
            a[i] = (d / e).ln();
        }

        // per-year Newton step for k_j on its strictly convex partial
        // objective sum_i E e^{off + a + b k} - k sum_i D b
        for j in 0..nt {
            let lin: f64 = (0..nx).map(|i| deaths[(i, j)] * b[i]).sum();
            let f = |kk: f64| -> f64 {
                (0..nx)
                    .map(|i| exposures[(i, j)] * (offset[(i, j)] + a[i] + b[i] * kk).exp())
                    .sum::<f64>()
                    - kk * lin
            };
            let mut grad = -lin;
            let mut hess = 0.0;
            for i in 0..nx {
                let mu = exposures[(i, j)] * (offset[(i, j)] + a[i] + b[i] * k[j]).exp();
                grad += mu * b[i];
                hess += mu * b[i] * b[i];
            }
            if hess <= f64::MIN_POSITIVE {
                continue;
            }
            let f0 = f(k[j]);
            let mut step = -grad / hess;
            for _ in 0..50 {
                let cand = k[j] + step;
                let fc = f(cand);
                if fc.is_finite() && fc <= f0 + 1e-9 * (f0.abs() + 1.0) {
                    k[j] = cand;
                    break;
                }
                step *= 0.5;
            }
        }

        // per-age Newton step for b_i, symmetric to the index update
        for i in 0..nx {
            let lin: f64 = (0..nt).map(|j| deaths[(i, j)] * k[j]).sum();
            let f = |bb: f64| -> f64 {
                (0..nt)
                    .map(|j| exposures[(i, j)] * (offset[(i, j)] + a[i] + bb * k[j]).exp())
                    .sum::<f64>()
                    - bb * lin
            };
            let mut grad = -lin;
            let mut hess = 0.0;
            for j in 0..nt {
                let mu = exposures[(i, j)] * (offset[(i, j)] + a[i] + b[i] * k[j]).exp();
                grad += mu * k[j];
                hess += mu * k[j] * k[j];
            }
            if hess <= f64::MIN_POSITIVE {
                continue;
            }
            let f0 = f(b[i]);
            let mut step = -grad / hess;
            for _ in 0..50 {
                let cand = b[i] + step;
                let fc = f(cand);
                if fc.is_finite() && fc <= f0 + 1e-9 * (f0.abs() + 1.0) {
                    b[i] = cand;
                    break;
                }
                step *= 0.5;
            }
        }

        renormalise(&mut a, &mut b, &mut k);

        let dev_new = poisson_deviance(deaths, &means(&a, &b, &k));
        rel = (deviance - dev_new).abs() / (dev_new.abs() + 0.1);
        deviance = dev_new;
        if rel < options.tol {
            renormalise(&mut a, &mut b, &mut k);
            fix_sign(&mut b, &mut k);
            return Ok(BilinearFit {
                factors: Factors {
                    level: a,
                    loading: b,
                    index: k,
                },
                deviance,
                sweeps: sweep,
            });
        }
    }
    Err(LiLeeError::NotConverged {
        context,
        sweeps: options.max_sweeps,
        rel_change: rel,
    })
}

/// Centres the index into the levels and scales the loading to unit sum of
/// squares; leaves every fitted rate unchanged.
fn renormalise(a: &mut [f64], b: &mut [f64], k: &mut [f64]) {
    let kbar = k.iter().sum::<f64>() / k.len() as f64;
    for v in k.iter_mut() {
        *v -= kbar;
    }
    for (ai, bi) in a.iter_mut().zip(b.iter()) {
        *ai += bi * kbar;
    }
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in b.iter_mut() {
            *v /= norm;
        }
        for v in k.iter_mut() {
            *v *= norm;
        }
    }
}

/// Flips both factors if the loading sum is negative.
fn fix_sign(b: &mut [f64], k: &mut [f64]) {
    if b.iter().sum::<f64>() < 0.0 {
        for v in b.iter_mut() {
            *v = -*v;
        }
        for v in k.iter_mut() {
            *v = -*v;
        }
    }
}

fn check_adjustment(
    what: &'static str,
    adj: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), LiLeeError> {
    if adj.shape() != (rows, cols) {
        return Err(LiLeeError::ShapeMismatch {
            what,
            got_rows: adj.nrows(),
            got_cols: adj.ncols(),
            rows,
            cols,
        });
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = adj[(i, j)];
            if !v.is_finite() || v <= 0.0 {
                return Err(LiLeeError::BadValue {
                    what,
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Fits the full two-step model. `adjustment` scales each gender's
/// exposures cell by cell before fitting; `None` uses them as is.
pub fn fit(
    data: &AnnualMortalityData,
    adjustment: Option<&ExposureAdjustment>,
    options: &FitOptions,
) -> Result<LiLeeFit, LiLeeError> {
    let f = &data.female;
    let m = &data.male;
    let (nx, nt) = f.deaths.shape();
    if m.deaths.shape() != (nx, nt) || f.ages != m.ages || f.years != m.years {
        return Err(LiLeeError::ShapeMismatch {
            what: "male surface",
            got_rows: m.deaths.nrows(),
            got_cols: m.deaths.ncols(),
            rows: nx,
            cols: nt,
        });
    }

    let (ef, em) = match adjustment {
        Some(adj) => {
            check_adjustment("female exposure adjustment", &adj.female, nx, nt)?;
            check_adjustment("male exposure adjustment", &adj.male, nx, nt)?;
            (
                f.exposures.component_mul(&adj.female),
                m.exposures.component_mul(&adj.male),
            )
        }
        None => (f.exposures.clone(), m.exposures.clone()),
    };

    let d_agg = &f.deaths + &m.deaths;
    let e_agg = &ef + &em;
    let zero_offset = DMatrix::zeros(nx, nt);
    let common = fit_bilinear("common step", &d_agg, &e_agg, &zero_offset, options)?;

    let common_offset = DMatrix::from_fn(nx, nt, |i, j| {
        common.factors.level[i] + common.factors.loading[i] * common.factors.index[j]
    });
    let (female, male) = rayon::join(
        || fit_bilinear("female step", &f.deaths, &ef, &common_offset, options),
        || fit_bilinear("male step", &m.deaths, &em, &common_offset, options),
    );
    let female = female?;
    let male = male?;

    Ok(LiLeeFit {
        ages: f.ages.clone(),
        years: f.years.clone(),
        common: common.factors,
        female: female.factors,
        male: male.factors,
        common_deviance: common.deviance,
        female_deviance: female.deviance,
        male_deviance: male.deviance,
        common_sweeps: common.sweeps,
        female_sweeps: female.sweeps,
        male_sweeps: male.sweeps,
    })
}

/// `(D - mu) / sqrt(mu)` against the fitted means `mu = E * m`.
pub fn pearson_residuals(
    deaths: &DMatrix<f64>,
    exposures: &DMatrix<f64>,
    rates: &DMatrix<f64>,
) -> DMatrix<f64> {
    DMatrix::from_fn(deaths.nrows(), deaths.ncols(), |i, j| {
        let mu = exposures[(i, j)] * rates[(i, j)];
        (deaths[(i, j)] - mu) / mu.sqrt()
    })
}
