//! BFGS minimizer with backtracking line search.
//!
//! Parameter vectors here are small (a handful of intercepts plus a few
//! covariate slopes), so the dense inverse-Hessian update is cheap.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    /// Stop when the gradient sup-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which must return the objective value and its gradient.
pub fn minimize<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = f(x.as_slice());
    let mut grad = DVector::from_vec(g0);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut first_step = true;
    let mut iterations = 0;

    if n == 0 {
        return BfgsOutcome {
            x: vec![],
            value: fx,
            grad_norm: 0.0,
            iterations: 0,
            converged: true,
        };
    }

    while iterations < opts.max_iter {
        if sup_norm(&grad) <= opts.tol {
            break;
        }
        iterations += 1;

        let mut direction = -(&h_inv * &grad);
        let mut descent = direction.dot(&grad);
        if !(descent < 0.0) || !descent.is_finite() {
            // Curvature approximation went bad; fall back to steepest descent.
            h_inv = DMatrix::identity(n, n);
            direction = -grad.clone();
            descent = direction.dot(&grad);
        }

        // Armijo backtracking.
        let mut step = 1.0f64;
        let c1 = 1e-4;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &x + step * &direction;
            let (f_new, g_new) = f(candidate.as_slice());
            if f_new.is_finite() && f_new <= fx + c1 * step * descent {
                accepted = Some((candidate, f_new, DVector::from_vec(g_new)));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // No decrease found along this direction; give up here.
            break;
        };

        let s = &x_new - &x;
        let y = &g_new - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_step {
                // Scale the initial inverse Hessian to the first curvature.
                h_inv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first_step = false;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H' = H - rho (s yᵀH + H y sᵀ) + (rho² yᵀH y + rho) s sᵀ
            let s_hy = &s * hy.transpose();
            h_inv -= rho * (&s_hy + s_hy.transpose());
            h_inv += (rho * rho * yhy + rho) * (&s * s.transpose());
        }

        x = x_new;
        fx = f_new;
        grad = g_new;
    }

    let grad_norm = sup_norm(&grad);
    BfgsOutcome {
        x: x.as_slice().to_vec(),
        value: fx,
        grad_norm,
        iterations,
        converged: grad_norm <= opts.tol,
    }
}
