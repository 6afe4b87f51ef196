use super::Objective;

/// Largest relative disagreement between the analytic gradient and a central
/// difference with step `h`, measured per coordinate as
/// `|analytic - numeric| / (|analytic| + h)`.
pub fn check_gradient<F: Objective + ?Sized>(f: &F, x: &[f64], h: f64) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    let (_, analytic) = f.value_grad(x);
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let (fp, _) = f.value_grad(&probe);
        probe[i] = x[i] - h;
        let (fm, _) = f.value_grad(&probe);
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + h);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn quadratic(x: &[f64]) -> (f64, Vec<f64>) {
        let v = x
            .iter()
            .enumerate()
            .map(|(i, v)| (i + 1) as f64 * v * v)
            .sum();
        let g = x
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 * (i + 1) as f64 * v)
            .collect();
        (v, g)
    }

    #[test]
    fn exact_gradient_passes() {
        let mut rng = Rng::new(3);
        let x: Vec<f64> = (0..6).map(|_| rng.uniform(-2.0, 2.0)).collect();
        assert!(check_gradient(&quadratic, &x, 1e-5) <= 1e-9);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let corrupted = |x: &[f64]| {
            let (v, mut g) = quadratic(x);
            g[2] *= 2.0;
            (v, g)
        };
        let x = [0.3, -1.1, 0.7, 1.9];
        assert!(check_gradient(&corrupted, &x, 1e-5) >= 0.3);
    }
}
