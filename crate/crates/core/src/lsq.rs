//! Small dense nonlinear least squares: Gauss–Newton with Levenberg–Marquardt
//! damping and a central-difference Jacobian.
//!
//! Problems here have at most a handful of parameters, so the normal
//! equations are formed and solved directly.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease of an accepted step falls below this.
    pub cost_tolerance: f64,
    /// Stop once every relative parameter update falls below this.
    pub step_tolerance: f64,
    /// Absolute cost considered an exact fit.
    pub cost_floor: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-14,
            step_tolerance: 1e-12,
            cost_floor: 1e-28,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64]) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1e-6);
        probe[j] = x[j] + h;
        let up = f(&probe);
        probe[j] = x[j] - h;
        let down = f(&probe);
        probe[j] = x[j];
        match (up, down) {
            (Some(u), Some(d)) => {
                for i in 0..m {
                    jac[(i, j)] = (u[i] - d[i]) / (2.0 * h);
                }
            }
            (Some(u), None) => {
                for i in 0..m {
                    jac[(i, j)] = (u[i] - r0[i]) / h;
                }
            }
            (None, Some(d)) => {
                for i in 0..m {
                    jac[(i, j)] = (r0[i] - d[i]) / h;
                }
            }
            (None, None) => return None,
        }
    }
    Some(jac)
}

/// Minimises `Σ rᵢ(x)²` starting from `x0`.
///
/// `residuals` returns `None` for infeasible parameters; such trial steps are
/// rejected and the damping raised. Returns [`Error::NonConvergence`] with the
/// best point found if the iteration budget runs out.
pub fn gauss_newton<F>(residuals: F, x0: &[f64], opts: &LsqOptions) -> Result<LsqSolution>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut x = x0.to_vec();
    let mut r = residuals(&x).ok_or_else(|| Error::Domain("initial guess is outside the model domain".into()))?;
    let mut cost = cost_of(&r);
    let mut lambda = 1e-3;
    let n = x.len();

    for iter in 0..opts.max_iterations {
        if cost <= opts.cost_floor {
            return Ok(LsqSolution {
                params: x,
                cost,
                iterations: iter,
            });
        }
        let jac = jacobian(&residuals, &x, &r)
            .ok_or_else(|| Error::Domain("Jacobian undefined at current estimate".into()))?;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        if grad.amax() <= 1e-300 {
            return Ok(LsqSolution {
                params: x,
                cost,
                iterations: iter,
            });
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..n {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(tr) = residuals(&trial) {
                let tc = cost_of(&tr);
                if tc.is_finite() && tc <= cost {
                    let rel_drop = (cost - tc) / cost.max(1e-300);
                    let small_step = step
                        .iter()
                        .zip(&x)
                        .all(|(s, xi)| s.abs() <= opts.step_tolerance * xi.abs().max(1e-9));
                    x = trial;
                    r = tr;
                    cost = tc;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if rel_drop < opts.cost_tolerance || small_step {
                        return Ok(LsqSolution {
                            params: x,
                            cost,
                            iterations: iter + 1,
                        });
                    }
                    break;
                }
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // no descent direction left at any damping: a (local) minimum
            return Ok(LsqSolution {
                params: x,
                cost,
                iterations: iter + 1,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        cost,
        best: x,
    })
}
