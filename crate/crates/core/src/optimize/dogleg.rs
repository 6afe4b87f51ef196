use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, norm2, solve_linear, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub resid_tol: f64,
    pub initial_radius: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 200,
            resid_tol: 1e-10,
            initial_radius: 1.0,
        }
    }
}

fn forward_jacobian<F>(f: &F, x: &[f64], fx: &[f64]) -> Matrix
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let k = x.len();
    let mut jac = Matrix::zeros(fx.len(), k);
    let mut probe = x.to_vec();
    for j in 0..k {
        let h = 1e-7 * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        let step = probe[j] - x[j];
        let fp = f(&probe);
        probe[j] = x[j];
        for i in 0..fx.len() {
            jac[(i, j)] = (fp[i] - fx[i]) / step;
        }
    }
    jac
}

/// Solves the square system `f(x) = 0` with a trust-region dogleg method.
///
/// The Jacobian is approximated by forward differences. Success is reported
/// only when `||f(x)|| <= resid_tol`; otherwise the error carries the best
/// iterate found.
pub fn solve_system<F>(f: &F, x0: &[f64], opts: &SolveOptions) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if fx.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "system has {} residuals for {} unknowns",
            fx.len(),
            x.len()
        )));
    }
    if x.iter().chain(&fx).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "non-finite starting point or residual".into(),
        ));
    }
    let mut fnorm = norm2(&fx);
    let mut radius = opts.initial_radius;
    let mut iterations = 0;

    while fnorm > opts.resid_tol {
        if iterations >= opts.max_iter || radius < 1e-15 * (1.0 + norm2(&x)) {
            return Err(Error::NoConvergence {
                best: x,
                residual_norm: fnorm,
                iterations,
            });
        }
        iterations += 1;

        let jac = forward_jacobian(f, &x, &fx);
        // gradient of 0.5 ||f||^2
        let grad = jac.transpose().matvec(&fx)?;
        let gnorm = norm2(&grad);
        if gnorm == 0.0 {
            // stationary point of the merit function that is not a root
            return Err(Error::NoConvergence {
                best: x,
                residual_norm: fnorm,
                iterations,
            });
        }
        let newton = solve_linear(&jac, &fx).map(|v| v.into_iter().map(|s| -s).collect::<Vec<_>>());
        let jg = jac.matvec(&grad)?;
        let cauchy_len = gnorm * gnorm / dot(&jg, &jg);
        let cauchy: Vec<f64> = grad.iter().map(|g| -cauchy_len * g).collect();

        let step = dogleg_step(newton.as_deref(), &cauchy, &grad, radius);
        let step_norm = norm2(&step);

        let js = jac.matvec(&step)?;
        let model: Vec<f64> = fx.iter().zip(&js).map(|(a, b)| a + b).collect();
        let predicted = 0.5 * (fnorm * fnorm - dot(&model, &model));

        let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let f_trial = f(&trial);
        let trial_norm = if f_trial.iter().all(|v| v.is_finite()) {
            norm2(&f_trial)
        } else {
            f64::INFINITY
        };
        let actual = 0.5 * (fnorm * fnorm - trial_norm * trial_norm);
        let ratio = if predicted > 0.0 {
            actual / predicted
        } else {
            -1.0
        };

        if ratio < 0.25 {
            radius = 0.25 * step_norm.min(radius);
        } else if ratio > 0.75 && step_norm >= 0.99 * radius {
            radius = (2.0 * radius).min(1e10);
        }
        if ratio > 1e-4 && trial_norm < fnorm {
            x = trial;
            fx = f_trial;
            fnorm = trial_norm;
        }
    }
    Ok(x)
}

fn dogleg_step(newton: Option<&[f64]>, cauchy: &[f64], grad: &[f64], radius: f64) -> Vec<f64> {
    if let Some(nt) = newton {
        if norm2(nt) <= radius {
            return nt.to_vec();
        }
    }
    let c_norm = norm2(cauchy);
    if c_norm >= radius || newton.is_none() {
        let gnorm = norm2(grad);
        let len = radius.min(c_norm);
        return grad.iter().map(|g| -len * g / gnorm).collect();
    }
    // walk from the Cauchy point toward the Newton point until the boundary
    let nt = newton.expect("checked above");
    let d: Vec<f64> = nt.iter().zip(cauchy).map(|(a, b)| a - b).collect();
    let a = dot(&d, &d);
    let b = 2.0 * dot(cauchy, &d);
    let c = c_norm * c_norm - radius * radius;
    let tau = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
    cauchy.iter().zip(&d).map(|(p, q)| p + tau * q).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_quadratic_root() {
        let f = |x: &[f64]| vec![x[0] * x[0] - 4.0];
        let x = solve_system(&f, &[1.0], &SolveOptions::default()).unwrap();
        assert!((x[0] - 2.0).abs() <= 1e-10);
    }

    #[test]
    fn linear_scalar() {
        let f = |x: &[f64]| vec![x[0] - 0f64.tanh()];
        let x = solve_system(&f, &[0.5], &SolveOptions::default()).unwrap();
        assert!(x[0].abs() <= 1e-10);
    }

    #[test]
    fn linear_pair() {
        let f = |x: &[f64]| vec![x[0] + x[1] - 3.0, x[0] - x[1] - 1.0];
        let x = solve_system(&f, &[0.0, 0.0], &SolveOptions::default()).unwrap();
        assert!((x[0] - 2.0).abs() <= 1e-10 && (x[1] - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn rosenbrock_gradient_root() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]
        };
        // from (-1.2, 1) the merit function leads into the singular valley
        // b = a^2 + 0.005, a local minimum of ||grad||, so start at the origin
        let x = solve_system(&f, &[0.0, 0.0], &SolveOptions::default()).unwrap();
        assert!(norm2(&f(&x)) <= 1e-10);
        assert!((x[0] - 1.0).abs() < 1e-8 && (x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn no_root_reports_best_iterate() {
        let f = |x: &[f64]| vec![x[0] * x[0] + 1.0];
        match solve_system(&f, &[3.0], &SolveOptions::default()) {
            Err(Error::NoConvergence {
                best,
                residual_norm,
                ..
            }) => {
                assert!(best[0].abs() < 1e-3);
                assert!((residual_norm - 1.0).abs() < 1e-6);
            }
            other => panic!("expected no-convergence, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_dimensions() {
        let f = |_: &[f64]| vec![0.0, 1.0];
        assert!(matches!(
            solve_system(&f, &[0.0], &SolveOptions::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
