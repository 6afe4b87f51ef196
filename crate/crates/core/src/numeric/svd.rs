use super::matrix::{dot, norm2};
use super::Matrix;
use crate::error::{Error, Result};

/// Thin singular value decomposition `a = u * diag(s) * v^T`.
///
/// For an `r x c` input with `k = min(r, c)`: `u` is `r x k`, `s` has `k`
/// nonincreasing nonnegative entries, `v` is `c x k`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// One-sided (Hestenes) Jacobi SVD.
///
/// Column pairs of a working copy are rotated until mutually orthogonal;
/// the accumulated rotations form `v`. At most `10 * max(rows, cols)` sweeps.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numerical("svd input has non-finite entries".into()));
    }
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let (rows, cols) = a.shape();
    if cols == 0 {
        return Ok(Svd {
            u: Matrix::zeros(rows, 0),
            s: Vec::new(),
            v: Matrix::zeros(0, 0),
        });
    }

    // column-major working storage
    let mut w: Vec<Vec<f64>> = (0..cols).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let max_sweeps = 10 * rows.max(cols);
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= OFF_DIAGONAL_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge within {max_sweeps} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let sigma: Vec<f64> = w.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let s_max = sigma[order[0]];
    let cutoff = s_max * f64::EPSILON * rows as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / sigma[j]).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            deficient.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &deficient);

    let s = order.iter().map(|&j| sigma[j]).collect();
    let mut u = Matrix::zeros(rows, cols);
    let mut vm = Matrix::zeros(cols, cols);
    for (slot, &j) in order.iter().enumerate() {
        u.set_col(slot, &u_cols[slot]);
        vm.set_col(slot, &v[j]);
    }
    Ok(Svd { u, s, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the `missing` slots with unit vectors orthogonal to every other
/// column, drawn from the standard basis by modified Gram-Schmidt.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let dim = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < dim, "cannot complete orthonormal basis");
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes for numerical orthogonality
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k == slot || other.iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    let proj = dot(&e, other);
                    for (ei, oi) in e.iter_mut().zip(other) {
                        *ei -= proj * oi;
                    }
                }
            }
            let len = norm2(&e);
            if len > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / len).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(d: &Svd) -> Matrix {
        d.u.matmul(&Matrix::diag(&d.s))
            .unwrap()
            .matmul_t(&d.v)
            .unwrap()
    }

    #[test]
    fn diagonal_input() {
        let a = Matrix::diag(&[3.0, 1.0]);
        let d = svd(&a).unwrap();
        assert_eq!(d.s, vec![3.0, 1.0]);
        for i in 0..2 {
            assert_eq!(d.u[(i, i)].abs(), 1.0);
            assert_eq!(d.v[(i, i)].abs(), 1.0);
        }
    }

    #[test]
    fn rank_one_input() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let d = svd(&a).unwrap();
        assert!((d.s[0] - 2.0).abs() < 1e-14);
        assert!(d.s[1].abs() < 1e-14);
        let utu = d.u.t_matmul(&d.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().frobenius() < 1e-12);
        assert!(reconstruct(&d).sub(&a).unwrap().frobenius() < 1e-14);
    }

    #[test]
    fn wide_input_is_transposed() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]]);
        let d = svd(&a).unwrap();
        assert_eq!(d.u.shape(), (2, 2));
        assert_eq!(d.v.shape(), (3, 2));
        assert!(reconstruct(&d).sub(&a).unwrap().frobenius() < 1e-13);
    }

    #[test]
    fn zero_matrix() {
        let d = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(d.s, vec![0.0, 0.0]);
        let utu = d.u.t_matmul(&d.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().frobenius() < 1e-14);
    }

    #[test]
    fn rejects_nan() {
        let a = Matrix::from_rows(&[[f64::NAN, 1.0]]);
        assert!(svd(&a).is_err());
    }
}
