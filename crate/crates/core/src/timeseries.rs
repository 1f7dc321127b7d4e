//! Stochastic dynamics of the fitted period indices.
//!
//! The three indices (common, female deviation, male deviation) evolve as
//!
//! ```text
//! Y_t = D + Phi Y_{t-1} + E_t,   Phi = diag(1, phi_f, phi_m)
//! ```
//!
//! a random walk with drift for the common index and mean-reverting AR(1)
//! deviations, with jointly normal innovations `E_t ~ N(0, Sigma)`. The
//! autoregressive coefficients are `(1 - 1e-6) * tanh(psi)`, keeping them
//! inside the unit interval; on explosive data the estimate saturates at
//! exactly `1 - 1e-6`. Fitting profiles out the drift and innovation
//! covariance in closed form and minimises the log determinant of the
//! profiled covariance over the two `psi` parameters.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim;
use crate::rng::{stream, Namespace};

/// Gap keeping the autoregressive coefficients strictly inside (-1, 1).
pub const AR_BOUNDARY_GAP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TsError {
    #[error("index series have lengths {a}, {b}, {c}; they must match")]
    LengthMismatch { a: usize, b: usize, c: usize },
    #[error("need at least {want} years of indices, got {got}")]
    TooShort { got: usize, want: usize },
    #[error("index series contain a non-finite value")]
    NonFinite,
    #[error("innovation covariance is not positive semidefinite (eigenvalue {min_eig:.3e} after jitter)")]
    NotPsd { min_eig: f64 },
}

/// Fitted dynamics of the three period indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendModel {
    /// Drift of the common index and intercepts of the two deviations.
    pub intercepts: [f64; 3],
    pub ar_female: f64,
    pub ar_male: f64,
    /// Innovation covariance, row major.
    pub noise_cov: [[f64; 3]; 3],
}

impl TrendModel {
    pub fn phi_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(1.0, self.ar_female, self.ar_male))
    }

    pub fn intercept_vector(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.intercepts)
    }

    pub fn cov_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.noise_cov[i][j])
    }

    /// Innovation correlations; exact zeros where a variance vanishes.
    pub fn residual_correlation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| {
            if i == j {
                1.0
            } else {
                let d = (self.noise_cov[i][i] * self.noise_cov[j][j]).sqrt();
                if d > 0.0 {
                    self.noise_cov[i][j] / d
                } else {
                    0.0
                }
            }
        })
    }
}

fn ar_from_psi(psi: f64) -> f64 {
    (1.0 - AR_BOUNDARY_GAP) * psi.tanh()
}

/// Drift and innovation covariance implied by fixed AR coefficients:
/// the drift is the mean one-step residual, the covariance the mean outer
/// product of the centred residuals.
fn profile(
    y: &[Vector3<f64>],
    phi_f: f64,
    phi_m: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    let n = y.len() - 1;
    let phi = Matrix3::from_diagonal(&Vector3::new(1.0, phi_f, phi_m));
    let mut mean = Vector3::zeros();
    for t in 1..y.len() {
        mean += y[t] - phi * y[t - 1];
    }
    mean /= n as f64;
    let mut cov = Matrix3::zeros();
    for t in 1..y.len() {
        let e = y[t] - phi * y[t - 1] - mean;
        cov += e * e.transpose();
    }
    cov /= n as f64;
    (mean, cov)
}

/// `log det` of the profiled covariance, ridge-stabilised so exact fits
/// (zero residual variance in some component) stay finite and flat.
fn profiled_objective(y: &[Vector3<f64>], psi_f: f64, psi_m: f64) -> f64 {
    let (_, cov) = profile(y, ar_from_psi(psi_f), ar_from_psi(psi_m));
    let ridge = 1e-12 * (cov.trace() / 3.0).max(1e-300);
    let m = cov + Matrix3::identity() * ridge;
    match nalgebra::Cholesky::new(m) {
        Some(c) => {
            let l = c.l();
            2.0 * (0..3).map(|i| l[(i, i)].ln()).sum::<f64>()
        }
        None => f64::INFINITY,
    }
}

/// Ordinary least squares AR(1) coefficient with intercept, as a starting
/// point for the likelihood search.
fn ols_ar1(series: &[f64]) -> f64 {
    let n = series.len() - 1;
    let x = &series[..n];
    let ynext = &series[1..];
    let xm = x.iter().sum::<f64>() / n as f64;
    let ym = ynext.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        num += (x[i] - xm) * (ynext[i] - ym);
        den += (x[i] - xm) * (x[i] - xm);
    }
    if den <= f64::MIN_POSITIVE {
        0.0
    } else {
        num / den
    }
}

fn psi_from_target(phi: f64) -> f64 {
    let clamped = phi.clamp(-0.99999, 0.99999);
    (clamped / (1.0 - AR_BOUNDARY_GAP)).atanh()
}

/// Fits the trend model to the three index series (same length, in year
/// order). At least five years are required.
pub fn fit(k: &[f64], kappa_f: &[f64], kappa_m: &[f64]) -> Result<TrendModel, TsError> {
    if k.len() != kappa_f.len() || k.len() != kappa_m.len() {
        return Err(TsError::LengthMismatch {
            a: k.len(),
            b: kappa_f.len(),
            c: kappa_m.len(),
        });
    }
    if k.len() < 5 {
        return Err(TsError::TooShort {
            got: k.len(),
            want: 5,
        });
    }
    if k.iter()
        .chain(kappa_f.iter())
        .chain(kappa_m.iter())
        .any(|v| !v.is_finite())
    {
        return Err(TsError::NonFinite);
    }
    let y: Vec<Vector3<f64>> = (0..k.len())
        .map(|t| Vector3::new(k[t], kappa_f[t], kappa_m[t]))
        .collect();

    let start = nalgebra::DVector::from_vec(vec![
        psi_from_target(ols_ar1(kappa_f)),
        psi_from_target(ols_ar1(kappa_m)),
    ]);
    let res = optim::minimize(
        |psi| profiled_objective(&y, psi[0], psi[1]),
        start,
        1e-8,
        300,
    );
    if !res.converged {
        log::debug!(
            "autoregressive search stopped after {} iterations without meeting \
             the gradient tolerance; continuing with the best point found",
            res.iterations
        );
    }
    let mut psi_f = res.x[0];
    let mut psi_m = res.x[1];
    let mut best = res.value;

    // the likelihood flattens exponentially in psi near the AR boundary,
    // which can stall a gradient method short of saturation; explicitly
    // test the saturated candidates and keep any that do at least as well
    let sat = 25.0;
    for (try_f, try_m) in [(true, false), (false, true), (true, true)] {
        let cf = if try_f { sat * psi_f.signum() } else { psi_f };
        let cm = if try_m { sat * psi_m.signum() } else { psi_m };
        let val = profiled_objective(&y, cf, cm);
        if val <= best {
            best = val;
            psi_f = cf;
            psi_m = cm;
        }
    }

    let phi_f = ar_from_psi(psi_f);
    let phi_m = ar_from_psi(psi_m);
    let (drift, cov) = profile(&y, phi_f, phi_m);
    Ok(TrendModel {
        intercepts: [drift[0], drift[1], drift[2]],
        ar_female: phi_f,
        ar_male: phi_m,
        noise_cov: [
            [cov[(0, 0)], cov[(0, 1)], cov[(0, 2)]],
            [cov[(1, 0)], cov[(1, 1)], cov[(1, 2)]],
            [cov[(2, 0)], cov[(2, 1)], cov[(2, 2)]],
        ],
    })
}

/// Square root `L` of a covariance (so `L L' = Sigma`) via the symmetric
/// eigendecomposition. Round-off negatives are clamped to zero, which maps
/// a zero matrix to a zero factor; genuinely indefinite input gets one
/// diagonal jitter, then fails.
fn psd_factor(cov: &Matrix3<f64>) -> Result<Matrix3<f64>, TsError> {
    let factor = |m: &Matrix3<f64>| -> Result<Matrix3<f64>, f64> {
        let sym = m.symmetric_eigen();
        let max_eig = sym.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
        let tol = 1e-8 * max_eig.max(f64::MIN_POSITIVE);
        let mut l = sym.eigenvectors;
        for j in 0..3 {
            let lambda = sym.eigenvalues[j];
            if lambda < -tol {
                return Err(lambda);
            }
            let s = lambda.max(0.0).sqrt();
            for i in 0..3 {
                l[(i, j)] *= s;
            }
        }
        Ok(l)
    };
    match factor(cov) {
        Ok(l) => Ok(l),
        Err(_) => {
            let scale = cov.diagonal().amax().max(f64::MIN_POSITIVE);
            let jittered = cov + Matrix3::identity() * (1e-10 * scale);
            factor(&jittered).map_err(|min_eig| TsError::NotPsd { min_eig })
        }
    }
}

/// Simulates `n_sims` joint index paths of length `horizon`, starting one
/// step after `y_last`. Path `s` is a 3 x horizon matrix drawn from stream
/// `s`, so results do not depend on thread scheduling or on how many other
/// paths are requested. A zero covariance reproduces the deterministic
/// recursion exactly.
pub fn simulate_paths(
    model: &TrendModel,
    y_last: &Vector3<f64>,
    horizon: usize,
    n_sims: usize,
    root_seed: u64,
) -> Result<Vec<DMatrix<f64>>, TsError> {
    let l = psd_factor(&model.cov_matrix())?;
    let phi = model.phi_matrix();
    let d = model.intercept_vector();
    let paths: Vec<DMatrix<f64>> = (0..n_sims)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(root_seed, Namespace::TrendPaths, s as u64);
            let mut out = DMatrix::zeros(3, horizon);
            let mut y = *y_last;
            for h in 0..horizon {
                let z = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                y = d + phi * y + l * z;
                out.set_column(h, &y);
            }
            out
        })
        .collect();
    Ok(paths)
}
