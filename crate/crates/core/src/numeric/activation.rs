use serde::{Deserialize, Serialize};

use super::Matrix;

/// Elementwise activation applied after each affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    #[inline]
    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn activate(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Linear => z.clone(),
            _ => z.map(|v| self.apply(v)),
        }
    }

    pub fn activate_deriv(self, z: &Matrix) -> Matrix {
        z.map(|v| self.deriv(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero() {
        let z = Matrix::zeros(1, 1);
        assert_eq!(Activation::Tanh.activate(&z)[(0, 0)], 0.0);
        assert_eq!(Activation::Tanh.activate_deriv(&z)[(0, 0)], 1.0);
    }

    #[test]
    fn linear_is_identity() {
        let z = Matrix::from_rows(&[[5.0, -2.0]]);
        assert_eq!(Activation::Linear.activate(&z), z);
        assert_eq!(
            Activation::Linear.activate_deriv(&z),
            Matrix::from_rows(&[[1.0, 1.0]])
        );
    }

    #[test]
    fn tanh_matches_reference() {
        // reference: tanh(0.6) = (e^1.2 - 1) / (e^1.2 + 1)
        let e = 1.2f64.exp();
        let reference = (e - 1.0) / (e + 1.0);
        let z = Matrix::from_rows(&[[0.6]]);
        let v = Activation::Tanh.activate(&z)[(0, 0)];
        let d = Activation::Tanh.activate_deriv(&z)[(0, 0)];
        assert!((v - reference).abs() <= 1e-12);
        assert!((d - (1.0 - reference * reference)).abs() <= 1e-12);
    }
}
