//! Damped least-squares (Levenberg-Marquardt) over a fixed-size parameter
//! vector with a numeric central-difference Jacobian.

use nalgebra::{DMatrix, DVector, SVector};
use thiserror::Error;

/// Central-difference step for the numeric Jacobian.
pub const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("cost became non-finite during optimization")]
    NonFiniteCost,
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iters: usize,
    pub initial_damping: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iters: 50,
            initial_damping: 1e-3,
            step_tolerance: 1e-8,
            cost_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult<const N: usize> {
    pub params: SVector<f64, N>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step (starting cost first).
    pub cost_trace: Vec<f64>,
}

pub fn cost_of(residuals: &DVector<f64>) -> f64 {
    residuals.norm_squared()
}

/// Numeric Jacobian of `f` by central differences.
pub fn numeric_jacobian<const N: usize>(
    f: &mut impl FnMut(&SVector<f64, N>) -> DVector<f64>,
    params: &SVector<f64, N>,
) -> DMatrix<f64> {
    let r0 = f(params);
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, N);
    for col in 0..N {
        let mut hi = *params;
        let mut lo = *params;
        hi[col] += JACOBIAN_STEP;
        lo[col] -= JACOBIAN_STEP;
        let rh = f(&hi);
        let rl = f(&lo);
        for row in 0..m {
            jac[(row, col)] = (rh[row] - rl[row]) / (2.0 * JACOBIAN_STEP);
        }
    }
    jac
}

/// Minimize |f(x)|^2. `project` is applied to every trial point (parameter
/// clamping such as the half-extent floor). Accepted steps never increase
/// the cost; damping grows on rejection and shrinks on acceptance.
pub fn minimize<const N: usize>(
    mut f: impl FnMut(&SVector<f64, N>) -> DVector<f64>,
    project: impl Fn(SVector<f64, N>) -> SVector<f64, N>,
    init: SVector<f64, N>,
    opts: &LmOptions,
) -> Result<LmResult<N>, SolverError> {
    let mut params = project(init);
    let mut residuals = f(&params);
    let mut cost = cost_of(&residuals);
    if !cost.is_finite() {
        return Err(SolverError::NonFiniteCost);
    }
    let mut damping = opts.initial_damping;
    let mut trace = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        let jac = numeric_jacobian(&mut f, &params);
        let jt = jac.transpose();
        let hessian = &jt * &jac;
        let gradient = &jt * &residuals;
        if gradient.amax() < 1e-14 {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..16 {
            let mut damped = hessian.clone();
            for i in 0..N {
                damped[(i, i)] += damping * (1.0 + hessian[(i, i)]);
            }
            let step = match damped.clone().lu().solve(&(-&gradient)) {
                Some(s) => s,
                None => {
                    damping *= 10.0;
                    continue;
                }
            };
            let mut trial = params;
            for i in 0..N {
                trial[i] += step[i];
            }
            let trial = project(trial);
            let trial_res = f(&trial);
            let trial_cost = cost_of(&trial_res);
            if !trial_cost.is_finite() {
                return Err(SolverError::NonFiniteCost);
            }
            if trial_cost <= cost {
                let step_norm = step.norm();
                let rel_drop = (cost - trial_cost) / cost.max(1e-300);
                params = trial;
                residuals = trial_res;
                cost = trial_cost;
                trace.push(cost);
                damping = (damping / 3.0).max(1e-12);
                accepted = true;
                if step_norm < opts.step_tolerance || rel_drop < opts.cost_tolerance {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
            if damping > 1e12 {
                break;
            }
        }
        if !accepted {
            // No downhill step found at any damping: local minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    Ok(LmResult {
        params,
        cost,
        iterations,
        converged,
        cost_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_small_nonlinear_problem() {
        // Fit y = a * exp(b * x) to exact samples.
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * (0.5 * x).exp()).collect();
        let f = |p: &SVector<f64, 2>| {
            DVector::from_iterator(
                xs.len(),
                xs.iter().zip(&ys).map(|(x, y)| p[0] * (p[1] * x).exp() - y),
            )
        };
        let result = minimize(
            f,
            |p| p,
            SVector::<f64, 2>::new(1.0, 0.0),
            &LmOptions::default(),
        )
        .unwrap();
        assert!(result.converged);
        assert_relative_eq!(result.params[0], 2.0, epsilon = 1e-6);
        assert_relative_eq!(result.params[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn accepted_steps_never_increase_cost() {
        let f = |p: &SVector<f64, 2>| {
            DVector::from_vec(vec![
                p[0] * p[0] + p[1] - 11.0,
                p[0] + p[1] * p[1] - 7.0,
            ])
        };
        let result = minimize(
            f,
            |p| p,
            SVector::<f64, 2>::new(-3.0, 5.0),
            &LmOptions::default(),
        )
        .unwrap();
        for pair in result.cost_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }
}
