//! Dense linear algebra, activations and seeded randomness.

mod activation;
mod matrix;
mod rng;
mod svd;

pub use activation::Activation;
pub use matrix::{dot, norm2, solve_linear, Matrix};
pub use rng::Rng;
pub use svd::{svd, Svd};
