use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::numeric::{dot, norm2};

/// Descent method used by [`minimize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Lbfgs,
    /// Fixed-step steepest descent; the step is halved within an iteration
    /// until the loss does not increase.
    GradientDescent {
        step: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    pub method: Method,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub memory: usize,
    /// Sufficient-decrease constant of the strong Wolfe conditions.
    pub c1: f64,
    /// Curvature constant of the strong Wolfe conditions.
    pub c2: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            method: Method::Lbfgs,
            max_iter: 2000,
            grad_tol: 1e-6,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub params: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn evaluate<F: Objective + ?Sized>(f: &F, x: Vec<f64>) -> Point {
    let (v, g) = f.value_grad(&x);
    Point { x, f: v, g }
}

fn is_finite_point(p: &Point) -> bool {
    p.f.is_finite() && p.g.iter().all(|v| v.is_finite())
}

/// Minimizes `f` starting from `x0`.
///
/// Every accepted step is passed through [`Objective::project`]. The loss
/// sequence of accepted iterates is nonincreasing; a failed line search ends
/// the run with `converged = false` and the best iterate so far.
pub fn minimize<F: Objective + ?Sized>(
    f: &F,
    x0: &[f64],
    opts: &MinimizeOptions,
) -> Result<OptimResult> {
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite starting point".into()));
    }
    let mut x = x0.to_vec();
    f.project(&mut x);
    let mut cur = evaluate(f, x);
    if !is_finite_point(&cur) {
        return Err(Error::Numerical(format!(
            "objective is not finite at the starting point (loss {})",
            cur.f
        )));
    }
    match opts.method {
        Method::Lbfgs => lbfgs(f, cur, opts),
        Method::GradientDescent { step } => {
            if !(step > 0.0) {
                return Err(Error::Contract(
                    "gradient-descent step must be positive".into(),
                ));
            }
            let mut iterations = 0;
            let mut converged = false;
            while iterations < opts.max_iter {
                if norm2(&cur.g) <= opts.grad_tol {
                    converged = true;
                    break;
                }
                let mut h = step;
                let mut accepted = None;
                for _ in 0..40 {
                    let mut x: Vec<f64> =
                        cur.x.iter().zip(&cur.g).map(|(x, g)| x - h * g).collect();
                    f.project(&mut x);
                    let next = evaluate(f, x);
                    if is_finite_point(&next) && next.f <= cur.f {
                        accepted = Some(next);
                        break;
                    }
                    h *= 0.5;
                }
                match accepted {
                    Some(next) => cur = next,
                    None => break,
                }
                iterations += 1;
            }
            let grad_norm = norm2(&cur.g);
            Ok(OptimResult {
                converged: converged || grad_norm <= opts.grad_tol,
                params: cur.x,
                loss: cur.f,
                iterations,
                grad_norm,
            })
        }
    }
}

fn lbfgs<F: Objective + ?Sized>(
    f: &F,
    mut cur: Point,
    opts: &MinimizeOptions,
) -> Result<OptimResult> {
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let gnorm = norm2(&cur.g);
        if gnorm <= opts.grad_tol {
            converged = true;
            break;
        }

        let mut dir = two_loop(&cur.g, &history);
        let mut slope = dot(&dir, &cur.g);
        if !(slope < 0.0) {
            history.clear();
            dir = cur.g.iter().map(|g| -g).collect();
            slope = -gnorm * gnorm;
        }
        let first_step = if history.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let next = match line_search(f, &cur, &dir, slope, first_step, opts) {
            Some(p) => p,
            None if !history.is_empty() => {
                // stale curvature pairs; retry once along steepest descent
                history.clear();
                let sd: Vec<f64> = cur.g.iter().map(|g| -g).collect();
                match line_search(f, &cur, &sd, -gnorm * gnorm, (1.0 / gnorm).min(1.0), opts) {
                    Some(p) => p,
                    None => break,
                }
            }
            None => break,
        };

        let mut next = next;
        let mut x = next.x.clone();
        if f.project(&mut x) {
            next = evaluate(f, x);
            if !is_finite_point(&next) || next.f > cur.f {
                break;
            }
        }

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) && sy > 0.0 {
            if history.len() == opts.memory.max(1) {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        cur = next;
        iterations += 1;
    }

    let grad_norm = norm2(&cur.g);
    Ok(OptimResult {
        converged: converged || grad_norm <= opts.grad_tol,
        params: cur.x,
        loss: cur.f,
        iterations,
        grad_norm,
    })
}

/// Two-loop recursion: returns `-H g` for the implicit inverse Hessian.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` when no
/// step with sufficient decrease is found.
fn line_search<F: Objective + ?Sized>(
    f: &F,
    cur: &Point,
    dir: &[f64],
    slope0: f64,
    first_step: f64,
    opts: &MinimizeOptions,
) -> Option<Point> {
    let (c1, c2) = (opts.c1, opts.c2);
    let f0 = cur.f;
    let at = |a: f64| -> (Point, f64) {
        let x: Vec<f64> = cur.x.iter().zip(dir).map(|(x, d)| x + a * d).collect();
        let p = evaluate(f, x);
        let slope = dot(&p.g, dir);
        (p, slope)
    };
    let armijo_fails = |a: f64, fa: f64| !fa.is_finite() || fa > f0 + c1 * a * slope0;

    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut slope_prev = slope0;
    let mut prev_point: Option<Point> = None;
    let mut a = first_step;

    for i in 0..40 {
        let (p, slope) = at(a);
        if armijo_fails(a, p.f) || (i > 0 && p.f >= f_prev) || !slope.is_finite() {
            return zoom(
                f,
                cur,
                dir,
                slope0,
                opts,
                (a_prev, f_prev, slope_prev, prev_point),
                (a, p.f),
            );
        }
        if slope.abs() <= -c2 * slope0 {
            return Some(p);
        }
        if slope >= 0.0 {
            let hi_f = f_prev;
            return zoom(
                f,
                cur,
                dir,
                slope0,
                opts,
                (a, p.f, slope, Some(p)),
                (a_prev, hi_f),
            );
        }
        a_prev = a;
        f_prev = p.f;
        slope_prev = slope;
        prev_point = Some(p);
        a *= 2.0;
    }
    prev_point
}

#[allow(clippy::type_complexity)]
fn zoom<F: Objective + ?Sized>(
    f: &F,
    cur: &Point,
    dir: &[f64],
    slope0: f64,
    opts: &MinimizeOptions,
    lo: (f64, f64, f64, Option<Point>),
    hi: (f64, f64),
) -> Option<Point> {
    let (c1, c2) = (opts.c1, opts.c2);
    let f0 = cur.f;
    let (mut a_lo, mut f_lo, mut s_lo, mut p_lo) = lo;
    let (mut a_hi, mut f_hi) = hi;

    for _ in 0..60 {
        let width = a_hi - a_lo;
        if width.abs() <= 1e-16 * a_lo.abs().max(1e-300) {
            break;
        }
        // quadratic interpolation from (f_lo, s_lo, f_hi), safeguarded
        let mut a = a_lo;
        if f_hi.is_finite() {
            let denom = 2.0 * (f_hi - f_lo - s_lo * width);
            if denom > 0.0 {
                a = a_lo - s_lo * width * width / denom;
            }
        }
        let (lo_b, hi_b) = if a_lo < a_hi {
            (a_lo, a_hi)
        } else {
            (a_hi, a_lo)
        };
        let margin = 0.1 * (hi_b - lo_b);
        if !(a > lo_b + margin && a < hi_b - margin) {
            a = 0.5 * (a_lo + a_hi);
        }

        let x: Vec<f64> = cur.x.iter().zip(dir).map(|(x, d)| x + a * d).collect();
        let p = evaluate(f, x);
        let slope = dot(&p.g, dir);
        if !p.f.is_finite() || p.f > f0 + c1 * a * slope0 || p.f >= f_lo || !slope.is_finite() {
            a_hi = a;
            f_hi = p.f;
        } else {
            if slope.abs() <= -c2 * slope0 {
                return Some(p);
            }
            if slope * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
            }
            a_lo = a;
            f_lo = p.f;
            s_lo = slope;
            p_lo = Some(p);
        }
    }
    // fall back to the best point satisfying sufficient decrease
    p_lo.filter(|p| p.f < f0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted_quadratic(x: &[f64]) -> (f64, Vec<f64>) {
        let c = [1.0, 2.0, 3.0];
        let v = x.iter().zip(c).map(|(x, c)| (x - c).powi(2)).sum();
        let g = x.iter().zip(c).map(|(x, c)| 2.0 * (x - c)).collect();
        (v, g)
    }

    pub(crate) fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (v, g)
    }

    #[test]
    fn quadratic_minimum() {
        let opts = MinimizeOptions {
            grad_tol: 1e-8,
            ..Default::default()
        };
        let r = minimize(&shifted_quadratic, &[0.0; 3], &opts).unwrap();
        assert!(r.converged);
        assert!(r.grad_norm <= 1e-8);
        for (x, c) in r.params.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - c).abs() < 1e-8);
        }
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let opts = MinimizeOptions {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let r = minimize(&rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.params[0] - 1.0).abs() < 1e-6);
        assert!((r.params[1] - 1.0).abs() < 1e-6);
        // gradient-zero check at the reported optimum
        let (_, g) = rosenbrock(&r.params);
        assert!(norm2(&g) <= 1e-10);
    }

    #[test]
    fn constant_objective_stops_immediately() {
        let constant = |x: &[f64]| (4.2, vec![0.0; x.len()]);
        let r = minimize(&constant, &[0.5, -3.0], &MinimizeOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 1);
        assert_eq!(r.params, vec![0.5, -3.0]);
    }

    #[test]
    fn nan_start_is_numerical_error() {
        let bad = |x: &[f64]| (f64::NAN, vec![0.0; x.len()]);
        assert!(matches!(
            minimize(&bad, &[1.0], &MinimizeOptions::default()),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn gradient_descent_fallback() {
        let opts = MinimizeOptions {
            method: Method::GradientDescent { step: 0.25 },
            grad_tol: 1e-8,
            ..Default::default()
        };
        let r = minimize(&shifted_quadratic, &[0.0; 3], &opts).unwrap();
        assert!(r.converged);
        assert!((r.params[2] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn projection_keeps_iterates_on_sphere() {
        struct OnSphere;
        impl Objective for OnSphere {
            fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
                // minimize x0 on the unit circle, gradient projected to the tangent
                let n = norm2(x);
                let u: Vec<f64> = x.iter().map(|v| v / n).collect();
                let g = vec![(1.0 - u[0] * u[0]) / n, -u[0] * u[1] / n];
                (u[0], g)
            }
            fn project(&self, x: &mut [f64]) -> bool {
                let n = norm2(x);
                x.iter_mut().for_each(|v| *v /= n);
                true
            }
        }
        let r = minimize(&OnSphere, &[0.6, 0.8], &MinimizeOptions::default()).unwrap();
        assert!((norm2(&r.params) - 1.0).abs() < 1e-12);
        assert!((r.params[0] + 1.0).abs() < 1e-5, "{r:?}");
    }
}
