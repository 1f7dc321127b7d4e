//! A small dense BFGS minimiser with numeric gradients.
//!
//! Used for low-dimensional smooth objectives (two or three parameters)
//! where an analytic gradient is not worth maintaining. Central differences
//! supply the gradient; an Armijo backtracking line search guarantees
//! descent; the inverse-Hessian update is skipped when the curvature
//! condition fails, which keeps the approximation positive definite.

use nalgebra::{DMatrix, DVector};

pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const GRAD_STEP: f64 = 1e-6;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn numeric_gradient<F: FnMut(&DVector<f64>) -> f64>(f: &mut F, x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut xp = x.clone();
    for i in 0..n {
        let h = GRAD_STEP * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Minimises `f` from `x0`. Stops when the gradient norm falls below
/// `grad_tol`, the step stalls, or `max_iter` is reached.
pub fn minimize<F: FnMut(&DVector<f64>) -> f64>(
    mut f: F,
    x0: DVector<f64>,
    grad_tol: f64,
    max_iter: usize,
) -> BfgsResult {
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = numeric_gradient(&mut f, &x);
    let mut h_inv = DMatrix::<f64>::identity(n, n);

    for iter in 0..max_iter {
        if g.norm() < grad_tol {
            return BfgsResult {
                x,
                value: fx,
                iterations: iter,
                converged: true,
            };
        }
        let mut direction = -(&h_inv * &g);
        let mut slope = direction.dot(&g);
        if slope >= 0.0 {
            // reset a corrupted approximation
            h_inv = DMatrix::identity(n, n);
            direction = -g.clone();
            slope = -g.norm_squared();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let x_new = &x + &direction * step;
            let f_new = f(&x_new);
            if f_new.is_finite() && f_new <= fx + ARMIJO_C1 * step * slope {
                accepted = Some((x_new, f_new));
                break;
            }
            step *= 0.5;
        }
        let (x_new, f_new) = match accepted {
            Some(t) => t,
            None => {
                return BfgsResult {
                    x,
                    value: fx,
                    iterations: iter,
                    converged: g.norm() < grad_tol.max(1e-5),
                }
            }
        };

        let g_new = numeric_gradient(&mut f, &x_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let identity = DMatrix::<f64>::identity(n, n);
            let left = &identity - &s * y.transpose() * rho;
            let right = &identity - &y * s.transpose() * rho;
            h_inv = &left * h_inv * right + &s * s.transpose() * rho;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    let converged = g.norm() < grad_tol;
    BfgsResult {
        x,
        value: fx,
        iterations: max_iter,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_bowl() {
        let res = minimize(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2),
            DVector::from_vec(vec![0.0, 0.0]),
            1e-8,
            200,
        );
        assert!(res.converged);
        assert_abs_diff_eq!(res.x[0], 3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(res.x[1], -1.0, epsilon = 1e-5);
    }

    #[test]
    fn rosenbrock_valley() {
        let res = minimize(
            |x| {
                let a = 1.0 - x[0];
                let b = x[1] - x[0] * x[0];
                a * a + 100.0 * b * b
            },
            DVector::from_vec(vec![-1.2, 1.0]),
            1e-7,
            2000,
        );
        assert_abs_diff_eq!(res.x[0], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(res.x[1], 1.0, epsilon = 1e-3);
    }
}
