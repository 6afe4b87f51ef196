//! Unconstrained minimization for training and a trust-region dogleg solver
//! for square nonlinear systems.

mod dogleg;
mod gradcheck;
mod lbfgs;

pub use dogleg::{solve_system, SolveOptions};
pub use gradcheck::check_gradient;
pub use lbfgs::{minimize, Method, MinimizeOptions, OptimResult};

/// Smooth objective returning its value and gradient at a point.
///
/// Implementations must be reentrant: the same objective may be evaluated
/// from several threads at once.
pub trait Objective {
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>);

    /// Maps an accepted iterate back onto a feasible set. Returns `true` when
    /// `x` was modified. The default leaves every point unchanged.
    fn project(&self, _x: &mut [f64]) -> bool {
        false
    }
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self(x)
    }
}
