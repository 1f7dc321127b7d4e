//! Natural cubic spline bases and the lagged tensor-product basis used by
//! the daily regression model.
//!
//! A natural cubic spline is cubic between its boundary knots and continues
//! linearly beyond them. The basis is built from a clamped cubic B-spline
//! family restricted, via two Householder reflections, to the subspace with
//! zero second derivative at both boundaries. The resulting columns are an
//! orthonormal recombination in coefficient space whose first column is
//! exactly constant; dropping it yields the no-intercept variant whose span
//! together with an external intercept recovers the full spline space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Spline order for cubics: degree 3, four coefficients per piece.
const ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("knots must be finite")]
    NonFiniteKnot,
    #[error("internal knots must be strictly increasing, got {0} then {1}")]
    KnotsNotIncreasing(f64, f64),
    #[error("internal knot {knot} lies outside the open boundary interval ({lo}, {hi})")]
    KnotOutsideBoundary { knot: f64, lo: f64, hi: f64 },
    #[error("boundary interval ({lo}, {hi}) is degenerate")]
    DegenerateBoundary { lo: f64, hi: f64 },
    #[error("lag basis needs max_lag >= 2 and at least one knot, got max_lag {max_lag}, {n_knots} knot(s)")]
    BadLagSetup { max_lag: usize, n_knots: usize },
    #[error("evaluation point at index {index} is not finite")]
    NonFiniteInput { index: usize },
    #[error("series of {len} day(s) is too short for lag window {max_lag}")]
    SeriesTooShort { len: usize, max_lag: usize },
    #[error("coefficient vector has length {got}, basis has dimension {want}")]
    CoefficientLength { got: usize, want: usize },
}

/// Description of one natural cubic spline basis.
///
/// Dimension is `internal_knots.len() + 1`, plus one when `intercept` is
/// set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub internal_knots: Vec<f64>,
    /// Boundary knots `(lo, hi)`; evaluation outside continues linearly.
    pub boundary: (f64, f64),
    pub intercept: bool,
}

impl SplineSpec {
    pub fn new(
        internal_knots: Vec<f64>,
        boundary: (f64, f64),
        intercept: bool,
    ) -> Result<Self, BasisError> {
        let (lo, hi) = boundary;
        if !lo.is_finite() || !hi.is_finite() || internal_knots.iter().any(|k| !k.is_finite()) {
            return Err(BasisError::NonFiniteKnot);
        }
        if !(lo < hi) {
            return Err(BasisError::DegenerateBoundary { lo, hi });
        }
        for w in internal_knots.windows(2) {
            if !(w[0] < w[1]) {
                return Err(BasisError::KnotsNotIncreasing(w[0], w[1]));
            }
        }
        for &k in &internal_knots {
            if k <= lo || k >= hi {
                return Err(BasisError::KnotOutsideBoundary { knot: k, lo, hi });
            }
        }
        Ok(Self {
            internal_knots,
            boundary,
            intercept,
        })
    }

    pub fn dim(&self) -> usize {
        self.internal_knots.len() + 1 + usize::from(self.intercept)
    }
}

/// Interior lag-spline knots placed evenly on the logarithmic lag scale:
/// `exp(j * ln(max_lag) / (n_knots + 1))` for `j = 1..=n_knots`. All knots
/// fall strictly between lag 1 and `max_lag`.
pub fn log_spaced_lag_knots(max_lag: usize, n_knots: usize) -> Result<Vec<f64>, BasisError> {
    if max_lag < 2 || n_knots == 0 {
        return Err(BasisError::BadLagSetup { max_lag, n_knots });
    }
    let log_max = (max_lag as f64).ln();
    Ok((1..=n_knots)
        .map(|j| (j as f64 * log_max / (n_knots + 1) as f64).exp())
        .collect())
}

/// Index of the non-empty knot interval `[t[span], t[span+1])` containing
/// `x`, clamped into the supported range so that boundary evaluation and
/// repeated end knots behave.
fn find_span(t: &[f64], x: f64) -> usize {
    let first = (0..t.len() - 1)
        .find(|&i| t[i] < t[i + 1])
        .expect("knot vector spans a non-empty interval");
    let last = (0..t.len() - 1)
        .rev()
        .find(|&i| t[i] < t[i + 1])
        .expect("knot vector spans a non-empty interval");
    let mut idx = match t.binary_search_by(|k| k.partial_cmp(&x).expect("finite knots")) {
        // land after the run of equal knots
        Ok(mut i) => {
            while i + 1 < t.len() && t[i + 1] == x {
                i += 1;
            }
            i
        }
        Err(i) => i.saturating_sub(1),
    };
    idx = idx.clamp(first, last);
    idx
}

/// Values of all `len(t) - k` order-`k` B-splines at `x` (de Boor).
fn bspline_all(t: &[f64], x: f64, k: usize) -> Vec<f64> {
    let n = t.len() - k;
    let span = find_span(t, x);
    let mut local = vec![0.0; k];
    local[0] = 1.0;
    for j in 1..k {
        let mut saved = 0.0;
        for r in 0..j {
            let i = span + 1 + r - j;
            let den = t[i + j] - t[i];
            let term = if den > 0.0 { local[r] / den } else { 0.0 };
            local[r] = saved + (t[i + j] - x) * term;
            saved = (x - t[i]) * term;
        }
        local[j] = saved;
    }
    let mut out = vec![0.0; n];
    for (r, v) in local.iter().enumerate() {
        let idx = span + 1 + r;
        if idx >= k && idx - k < n {
            out[idx - k] = *v;
        }
    }
    out
}

/// `d`-th derivative of all order-`k` B-splines at `x`, via the exact
/// lower-order difference recursion.
fn bspline_all_deriv(t: &[f64], x: f64, k: usize, d: usize) -> Vec<f64> {
    if d == 0 {
        return bspline_all(t, x, k);
    }
    let lower = bspline_all_deriv(t, x, k - 1, d - 1);
    let n = t.len() - k;
    let mut out = vec![0.0; n];
    let km1 = (k - 1) as f64;
    for i in 0..n {
        let a = if t[i + k - 1] > t[i] {
            km1 / (t[i + k - 1] - t[i]) * lower[i]
        } else {
            0.0
        };
        let b = if t[i + k] > t[i + 1] {
            km1 / (t[i + k] - t[i + 1]) * lower[i + 1]
        } else {
            0.0
        };
        out[i] = a - b;
    }
    out
}

/// Applies the Householder reflection defined by unit vector `v` to `x`.
fn reflect(v: &[f64], x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    for (xi, vi) in x.iter_mut().zip(v.iter()) {
        *xi -= 2.0 * dot * vi;
    }
}

fn householder_vector(x: &mut Vec<f64>, col: usize) -> Option<Vec<f64>> {
    for v in x.iter_mut().take(col) {
        *v = 0.0;
    }
    let norm: f64 = x[col..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    let alpha = if x[col] > 0.0 { -norm } else { norm };
    x[col] -= alpha;
    let vnorm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if vnorm == 0.0 {
        return None;
    }
    for v in x.iter_mut() {
        *v /= vnorm;
    }
    Some(std::mem::take(x))
}

/// A natural cubic spline basis ready for evaluation.
///
/// Stores the clamped knot vector and the `n_bsplines x dim` coefficient
/// transform from raw B-splines to natural-spline columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalBasis {
    spec: SplineSpec,
    knots: Vec<f64>,
    transform: DMatrix<f64>,
}

impl NaturalBasis {
    pub fn new(spec: SplineSpec) -> Result<Self, BasisError> {
        let (lo, hi) = spec.boundary;
        let mut knots = Vec::with_capacity(spec.internal_knots.len() + 2 * ORDER);
        knots.extend(std::iter::repeat(lo).take(ORDER));
        knots.extend(spec.internal_knots.iter().copied());
        knots.extend(std::iter::repeat(hi).take(ORDER));
        let nb = knots.len() - ORDER;

        // second-derivative rows at both boundaries define the constraint
        let c_lo = bspline_all_deriv(&knots, lo, ORDER, 2);
        let c_hi = bspline_all_deriv(&knots, hi, ORDER, 2);

        // orthonormal null-space basis via two Householder reflections on
        // the transposed constraint matrix
        let mut col0 = c_lo.clone();
        let mut reflections: Vec<Vec<f64>> = Vec::with_capacity(2);
        if let Some(v) = householder_vector(&mut col0, 0) {
            reflections.push(v);
        }
        let mut col1 = c_hi.clone();
        for v in &reflections {
            reflect(v, &mut col1);
        }
        if let Some(v) = householder_vector(&mut col1, 1) {
            reflections.push(v);
        }
        let dim_full = nb - 2;
        let mut transform = DMatrix::zeros(nb, dim_full);
        for j in 0..dim_full {
            let mut e = vec![0.0; nb];
            e[j + 2] = 1.0;
            for v in reflections.iter().rev() {
                reflect(v, &mut e);
            }
            for i in 0..nb {
                transform[(i, j)] = e[i];
            }
        }

        // rotate within the null space so the first column is the constant
        // function (B-spline coefficients all one, by partition of unity)
        let ones = DVector::from_element(nb, 1.0);
        let mut u: Vec<f64> = (transform.transpose() * &ones).data.into();
        if let Some(w) = householder_vector(&mut u, 0) {
            // transform <- transform * (I - 2 w w^T)
            let wv = DVector::from_vec(w);
            let tw = &transform * &wv;
            for j in 0..dim_full {
                for i in 0..nb {
                    transform[(i, j)] -= 2.0 * tw[i] * wv[j];
                }
            }
        }
        let col_sum: f64 = transform.column(0).iter().sum();
        if col_sum < 0.0 {
            for i in 0..nb {
                transform[(i, 0)] = -transform[(i, 0)];
            }
        }

        Ok(Self {
            spec,
            knots,
            transform,
        })
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Offset into the transform columns: the constant column is dropped
    /// when the basis carries no intercept.
    fn col_offset(&self) -> usize {
        usize::from(!self.spec.intercept)
    }

    fn raw_row(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.spec.boundary;
        if x < lo {
            let mut v = bspline_all(&self.knots, lo, ORDER);
            let d = bspline_all_deriv(&self.knots, lo, ORDER, 1);
            for (vi, di) in v.iter_mut().zip(d.iter()) {
                *vi += (x - lo) * di;
            }
            v
        } else if x > hi {
            let mut v = bspline_all(&self.knots, hi, ORDER);
            let d = bspline_all_deriv(&self.knots, hi, ORDER, 1);
            for (vi, di) in v.iter_mut().zip(d.iter()) {
                *vi += (x - hi) * di;
            }
            v
        } else {
            bspline_all(&self.knots, x, ORDER)
        }
    }

    /// Basis values at `x` written into `out` (length [`Self::dim`]).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let raw = self.raw_row(x);
        let off = self.col_offset();
        for (j, o) in out.iter_mut().enumerate() {
            let col = self.transform.column(j + off);
            *o = raw.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Design matrix with one row per evaluation point.
    pub fn design(&self, xs: &[f64]) -> Result<DMatrix<f64>, BasisError> {
        if let Some(index) = xs.iter().position(|v| !v.is_finite()) {
            return Err(BasisError::NonFiniteInput { index });
        }
        let mut m = DMatrix::zeros(xs.len(), self.dim());
        let mut row = vec![0.0; self.dim()];
        for (i, &x) in xs.iter().enumerate() {
            self.eval_into(x, &mut row);
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

/// Shape of the lagged tensor-product basis: a temperature spline crossed
/// with a lag spline over `0..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossBasisSpec {
    pub var: SplineSpec,
    pub lag: SplineSpec,
    pub max_lag: usize,
}

impl CrossBasisSpec {
    /// Standard layout: caller-supplied temperature spline (no intercept),
    /// lag spline with intercept, boundary `(0, max_lag)` and `n_lag_knots`
    /// interior knots evenly spaced on the log lag scale.
    pub fn with_log_lag_knots(
        var: SplineSpec,
        max_lag: usize,
        n_lag_knots: usize,
    ) -> Result<Self, BasisError> {
        let lag_knots = log_spaced_lag_knots(max_lag, n_lag_knots)?;
        let lag = SplineSpec::new(lag_knots, (0.0, max_lag as f64), true)?;
        Ok(Self { var, lag, max_lag })
    }

    pub fn var_dim(&self) -> usize {
        self.var.dim()
    }

    pub fn lag_dim(&self) -> usize {
        self.lag.dim()
    }

    pub fn dim(&self) -> usize {
        self.var.dim() * self.lag.dim()
    }
}

/// Evaluated cross-basis over a daily series.
///
/// Row `d` holds, for each column pair `(j, k)`, the sum over lags
/// `l = 0..=max_lag` of `R_j(x[d - l]) * C_k(l)`. Columns are ordered
/// temperature-major: pair `(j, k)` sits at `j * lag_dim + k`. The first
/// `valid_from` rows lack a full lag window and are filled with NaN.
#[derive(Debug, Clone)]
pub struct CrossBasis {
    pub matrix: DMatrix<f64>,
    pub valid_from: usize,
}

/// A cross-basis ready for evaluation: both marginal bases plus the
/// per-column lag totals needed for cumulative summaries.
#[derive(Debug, Clone)]
pub struct CrossBasisDef {
    spec: CrossBasisSpec,
    var: NaturalBasis,
    lag: NaturalBasis,
    /// `sum_l C_k(l)` for each lag column.
    lag_totals: Vec<f64>,
}

impl CrossBasisDef {
    pub fn new(spec: CrossBasisSpec) -> Result<Self, BasisError> {
        let var = NaturalBasis::new(spec.var.clone())?;
        let lag = NaturalBasis::new(spec.lag.clone())?;
        let mut lag_totals = vec![0.0; lag.dim()];
        let mut row = vec![0.0; lag.dim()];
        for l in 0..=spec.max_lag {
            lag.eval_into(l as f64, &mut row);
            for (t, &v) in lag_totals.iter_mut().zip(row.iter()) {
                *t += v;
            }
        }
        Ok(Self {
            spec,
            var,
            lag,
            lag_totals,
        })
    }

    pub fn spec(&self) -> &CrossBasisSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn var_basis(&self) -> &NaturalBasis {
        &self.var
    }

    pub fn lag_basis(&self) -> &NaturalBasis {
        &self.lag
    }

    /// Evaluates the cross-basis over a temperature series.
    ///
    /// The series must be longer than the lag window; the first `max_lag`
    /// rows are flagged by `valid_from` and hold NaN.
    pub fn build(&self, temps: &[f64]) -> Result<CrossBasis, BasisError> {
        let max_lag = self.spec.max_lag;
        if temps.len() <= max_lag {
            return Err(BasisError::SeriesTooShort {
                len: temps.len(),
                max_lag,
            });
        }
        let var_rows = self.var.design(temps)?;
        let lags: Vec<f64> = (0..=max_lag).map(|l| l as f64).collect();
        let lag_rows = self.lag.design(&lags)?;
        let (jv, jl) = (self.var.dim(), self.lag.dim());
        let n = temps.len();
        let mut m = DMatrix::from_element(n, jv * jl, f64::NAN);
        for d in max_lag..n {
            for j in 0..jv {
                for k in 0..jl {
                    let mut acc = 0.0;
                    for l in 0..=max_lag {
                        acc += var_rows[(d - l, j)] * lag_rows[(l, k)];
                    }
                    m[(d, j * jl + k)] = acc;
                }
            }
        }
        Ok(CrossBasis {
            matrix: m,
            valid_from: max_lag,
        })
    }

    /// Contrast vector `a` such that `a . coeffs` is the cumulative
    /// response at `temp` relative to `reference`:
    /// `a[(j, k)] = (R_j(temp) - R_j(reference)) * sum_l C_k(l)`.
    pub fn cumulative_contrast(&self, temp: f64, reference: f64) -> DVector<f64> {
        let (jv, jl) = (self.var.dim(), self.lag.dim());
        let rt = self.var.eval(temp);
        let rr = self.var.eval(reference);
        let mut a = DVector::zeros(jv * jl);
        for j in 0..jv {
            let diff = rt[j] - rr[j];
            for k in 0..jl {
                a[j * jl + k] = diff * self.lag_totals[k];
            }
        }
        a
    }

    /// Cumulative response at one temperature, relative to `reference`.
    pub fn cumulative_log_rr(
        &self,
        coeffs: &DVector<f64>,
        temp: f64,
        reference: f64,
    ) -> Result<f64, BasisError> {
        if coeffs.len() != self.dim() {
            return Err(BasisError::CoefficientLength {
                got: coeffs.len(),
                want: self.dim(),
            });
        }
        Ok(self.cumulative_contrast(temp, reference).dot(coeffs))
    }

    /// Collapses a coefficient vector over the lag dimension:
    /// `w_j = sum_k (sum_l C_k(l)) theta_{jk}`, so the cumulative response
    /// is `g(x) = sum_j (R_j(x) - R_j(ref)) w_j`.
    pub fn lag_collapse(&self, coeffs: &DVector<f64>) -> Result<Vec<f64>, BasisError> {
        if coeffs.len() != self.dim() {
            return Err(BasisError::CoefficientLength {
                got: coeffs.len(),
                want: self.dim(),
            });
        }
        let (jv, jl) = (self.var.dim(), self.lag.dim());
        let mut w = vec![0.0; jv];
        for j in 0..jv {
            for k in 0..jl {
                w[j] += self.lag_totals[k] * coeffs[j * jl + k];
            }
        }
        Ok(w)
    }

    /// Cumulative response curve over a temperature grid.
    pub fn cumulative_curve(
        &self,
        coeffs: &DVector<f64>,
        grid: &[f64],
        reference: f64,
    ) -> Result<Vec<f64>, BasisError> {
        if coeffs.len() != self.dim() {
            return Err(BasisError::CoefficientLength {
                got: coeffs.len(),
                want: self.dim(),
            });
        }
        let rr = self.var.eval(reference);
        let jv = self.var.dim();
        let w = self.lag_collapse(coeffs)?;
        let mut out = Vec::with_capacity(grid.len());
        let mut row = vec![0.0; jv];
        for &x in grid {
            self.var.eval_into(x, &mut row);
            let mut g = 0.0;
            for j in 0..jv {
                g += (row[j] - rr[j]) * w[j];
            }
            out.push(g);
        }
        Ok(out)
    }
}
