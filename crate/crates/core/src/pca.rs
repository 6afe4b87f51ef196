//! Principal component analysis and the linear relations carried by its
//! low-variance components.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{solve_linear, svd, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// `n x m`, orthonormal columns ordered by decreasing variance.
    pub components: Matrix,
    /// Sample variances (N - 1 denominator) of the projected data.
    pub latent_variances: Vec<f64>,
    pub mean: Vec<f64>,
    pub names: Vec<String>,
}

/// Fits the leading `m` principal directions of `d`.
///
/// Each component is signed so its largest-magnitude entry is positive.
pub fn fit_pca(d: &Dataset, m: usize) -> Result<PcaModel> {
    let n = d.n_vars();
    let samples = d.n_samples();
    if m == 0 || m > n {
        return Err(Error::Contract(format!(
            "number of components must be in 1..={n}, got {m}"
        )));
    }
    if samples < 2 {
        return Err(Error::Contract("PCA needs at least two samples".into()));
    }
    let mean = d.x.row_means();
    // samples x variables, centered
    let centered = Matrix::from_fn(samples, n, |j, i| d.x[(i, j)] - mean[i]);
    let dec = svd(&centered)?;

    let mut components = Matrix::zeros(n, m);
    for k in 0..m {
        let mut col = dec.v.col(k);
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        components.set_col(k, &col);
    }
    let denom = (samples - 1) as f64;
    let latent_variances = dec.s[..m].iter().map(|s| s * s / denom).collect();
    Ok(PcaModel {
        components,
        latent_variances,
        mean,
        names: d.names.clone(),
    })
}

impl PcaModel {
    pub fn n_vars(&self) -> usize {
        self.components.rows()
    }

    pub fn n_components(&self) -> usize {
        self.components.cols()
    }

    /// `y = P^T (x - mean)` for every column of `x`.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n_vars() {
            return Err(Error::DimensionMismatch(format!(
                "PCA expects {} variables, got {}",
                self.n_vars(),
                x.rows()
            )));
        }
        let neg: Vec<f64> = self.mean.iter().map(|v| -v).collect();
        let mut centered = x.clone();
        centered.add_col_broadcast(&neg);
        self.components.t_matmul(&centered)
    }

    /// `x_hat = P y + mean`.
    pub fn reconstruct(&self, y: &Matrix) -> Result<Matrix> {
        let mut x = self.components.matmul(y)?;
        x.add_col_broadcast(&self.mean);
        Ok(x)
    }

    /// Keeps only the leading `k` components.
    pub fn truncated(&self, k: usize) -> Result<PcaModel> {
        if k == 0 || k > self.n_components() {
            return Err(Error::Contract(format!(
                "cannot keep {k} of {} components",
                self.n_components()
            )));
        }
        Ok(PcaModel {
            components: self.components.col_block(0, k),
            latent_variances: self.latent_variances[..k].to_vec(),
            mean: self.mean.clone(),
            names: self.names.clone(),
        })
    }
}

/// Linear model `P_r^T (x - mean) = 0` spanned by the residual components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRelation {
    /// `n x (n - p)`; empty (zero columns) when no component qualified.
    pub residual_components: Matrix,
    pub mean: Vec<f64>,
    pub names: Vec<String>,
    /// Number of significant components `p`.
    pub p: usize,
}

impl LinearRelation {
    pub fn relation_count(&self) -> usize {
        self.residual_components.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.relation_count() == 0
    }

    /// `P_r^T (x - mean)`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        self.residual_components.transpose().matvec(&centered)
    }

    /// Solves the relation for the last `n - p` variables given the first `p`.
    pub fn solve_for_residual_vars(&self, x_p: &[f64]) -> Result<Vec<f64>> {
        let n = self.mean.len();
        let r = self.relation_count();
        if r == 0 {
            return Err(Error::NothingToExtract);
        }
        let p = n - r;
        if x_p.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "expected {p} known variables, got {}",
                x_p.len()
            )));
        }
        // rows of P_r^T split into known [B_p] and unknown [B_r] columns
        let pt = self.residual_components.transpose();
        let b_p = pt.col_block(0, p);
        let b_r = pt.col_block(p, n);
        let dx_p: Vec<f64> = x_p.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let rhs: Vec<f64> = b_p.matvec(&dx_p)?.into_iter().map(|v| -v).collect();
        let dx_r = solve_linear(&b_r, &rhs).ok_or_else(|| {
            Error::Numerical("residual components are singular in the unknown variables".into())
        })?;
        Ok(dx_r
            .iter()
            .zip(&self.mean[p..])
            .map(|(a, b)| a + b)
            .collect())
    }
}

/// Collects the components whose latent variance is below `eps`.
///
/// Requires a full-basis model (`m == n`). Returns an empty relation when
/// every component is significant.
pub fn extract_linear_model(mdl: &PcaModel, eps: f64) -> Result<LinearRelation> {
    if mdl.n_components() != mdl.n_vars() {
        return Err(Error::Contract(
            "linear model extraction needs a full-basis PCA fit".into(),
        ));
    }
    let p = mdl.latent_variances.iter().filter(|v| **v >= eps).count();
    // variances are sorted, so the residual set is a suffix
    Ok(residual_relation(mdl, p))
}

/// Uses the trailing `relations` components regardless of their variance.
pub fn extract_linear_model_fixed(mdl: &PcaModel, relations: usize) -> Result<LinearRelation> {
    let n = mdl.n_vars();
    if mdl.n_components() != n {
        return Err(Error::Contract(
            "linear model extraction needs a full-basis PCA fit".into(),
        ));
    }
    if relations == 0 || relations >= n {
        return Err(Error::Contract(format!(
            "relation count must be in 1..{n}, got {relations}"
        )));
    }
    Ok(residual_relation(mdl, n - relations))
}

fn residual_relation(mdl: &PcaModel, p: usize) -> LinearRelation {
    let n = mdl.n_vars();
    LinearRelation {
        residual_components: mdl.components.col_block(p, n),
        mean: mdl.mean.clone(),
        names: mdl.names.clone(),
        p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn line_dataset() -> Dataset {
        let mut rng = Rng::new(17);
        let x = Matrix::from_fn(2, 50, |_, _| 0.0);
        let mut x = x;
        for j in 0..50 {
            let t = rng.uniform(-1.0, 1.0);
            x[(0, j)] = t;
            x[(1, j)] = 2.0 * t;
        }
        Dataset::new(x, vec!["x1".into(), "x2".into()]).unwrap()
    }

    #[test]
    fn rank_one_pair() {
        let d = Dataset::new(
            Matrix::from_rows(&[[1.0, -1.0], [1.0, -1.0]]),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let m = fit_pca(&d, 2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((m.components[(0, 0)] - s).abs() < 1e-12);
        assert!((m.components[(1, 0)] - s).abs() < 1e-12);
        assert!(m.latent_variances[1].abs() < 1e-12);
        assert!((m.latent_variances[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_components() {
        let d = line_dataset();
        assert!(matches!(fit_pca(&d, 3), Err(Error::Contract(_))));
        assert!(matches!(fit_pca(&d, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn transform_of_mean_is_zero() {
        let d = line_dataset();
        let m = fit_pca(&d, 2).unwrap();
        let y = m.transform(&Matrix::column(&m.mean)).unwrap();
        assert!(y.max_abs() < 1e-15);
    }

    #[test]
    fn full_basis_reconstruction() {
        let mut rng = Rng::new(2);
        let d = Dataset::new(
            rng.normal_matrix(4, 30),
            (0..4).map(|i| format!("v{i}")).collect(),
        )
        .unwrap();
        let m = fit_pca(&d, 4).unwrap();
        let back = m.reconstruct(&m.transform(&d.x).unwrap()).unwrap();
        assert!(back.sub(&d.x).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn rank_one_data_one_component() {
        let d = line_dataset();
        let m = fit_pca(&d, 1).unwrap();
        let back = m.reconstruct(&m.transform(&d.x).unwrap()).unwrap();
        assert!(back.sub(&d.x).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn line_relation_recovers_normal() {
        let d = line_dataset();
        let m = fit_pca(&d, 2).unwrap();
        let rel = extract_linear_model(&m, 1e-4).unwrap();
        assert_eq!(rel.relation_count(), 1);
        assert_eq!(rel.p, 1);
        let normal = rel.residual_components.col(0);
        let s5 = 5f64.sqrt();
        let sign = normal[0].signum();
        assert!((sign * normal[0] - 2.0 / s5).abs() < 1e-6);
        assert!((sign * normal[1] + 1.0 / s5).abs() < 1e-6);
        let mut mse = 0.0;
        for j in 0..d.n_samples() {
            let pred = rel.solve_for_residual_vars(&[d.x[(0, j)]]).unwrap();
            mse += (pred[0] - d.x[(1, j)]).powi(2);
            assert!(rel.residual(&d.sample(j)).unwrap()[0].abs() <= 1e-10);
        }
        assert!(mse / d.n_samples() as f64 <= 1e-12);
    }

    #[test]
    fn isotropic_data_has_no_relation() {
        let mut rng = Rng::new(8);
        let d = Dataset::new(rng.normal_matrix(2, 200), vec!["a".into(), "b".into()]).unwrap();
        let rel = extract_linear_model(&fit_pca(&d, 2).unwrap(), 1e-4).unwrap();
        assert!(rel.is_empty());
        assert!(matches!(
            rel.solve_for_residual_vars(&[0.0, 0.0]),
            Err(Error::NothingToExtract)
        ));
    }

    #[test]
    fn fixed_relation_count() {
        let mut rng = Rng::new(8);
        let d = Dataset::new(
            rng.normal_matrix(3, 40),
            (0..3).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let m = fit_pca(&d, 3).unwrap();
        let rel = extract_linear_model_fixed(&m, 1).unwrap();
        assert_eq!(rel.p, 2);
        assert!(extract_linear_model_fixed(&m, 3).is_err());
        assert!(extract_linear_model(&m.truncated(2).unwrap(), 1e-4).is_err());
    }
}
