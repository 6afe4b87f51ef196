//! Implicit and explicit relations read off a trained model's residual
//! latents.
//!
//! A latent `y_i` with (near) zero variance is (near) constant over the
//! data, so `y_r(x) - ybar_r = 0` is a set of `n - p` equations relating the
//! variables. Relations work in the coordinates the model was trained in
//! (normalized, usually); [`ImplicitRelation::norm`] carries the statistics
//! for converting at the boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderModel, Layer, SkipKind};
use crate::dataset::{Dataset, NormStats};
use crate::error::{Error, Result};
use crate::numeric::{norm2, Matrix};
use crate::optimize::{solve_system, SolveOptions};
use crate::training::TrainOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    /// `A_Er s(...s(A_1 x)) - ybar_r = 0`
    Aeo,
    /// `x_r + A_Er s(...s(A_1 x)) - ybar_r = 0`, from an identity encoder skip.
    Raeo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitRelation {
    pub kind: RelationKind,
    pub n: usize,
    pub p: usize,
    /// Encoder layers before the last one.
    pub hidden: Vec<Layer>,
    /// Rows `p..m` of the last encoder layer.
    pub a_er: Matrix,
    pub b_er: Option<Vec<f64>>,
    /// Rows `p..m` of the encoder skip, when there is one.
    pub skip_r: Option<Matrix>,
    pub ybar_r: Vec<f64>,
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default)]
    pub norm: Option<NormStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitRelation {
    pub n: usize,
    pub p: usize,
    /// First encoder layer restricted to the columns of `x_p`.
    pub first: Layer,
    /// Remaining encoder layers before the last one.
    pub hidden: Vec<Layer>,
    pub a_er: Matrix,
    pub b_er: Option<Vec<f64>>,
    pub ybar_r: Vec<f64>,
    #[serde(default)]
    pub names: Vec<String>,
    #[serde(default)]
    pub norm: Option<NormStats>,
}

fn residual_kind(model: &AutoencoderModel) -> Result<RelationKind> {
    match model.encoder_skip {
        SkipKind::None => Ok(RelationKind::Aeo),
        SkipKind::Identity => Ok(RelationKind::Raeo),
        SkipKind::Fixed { .. } => Err(Error::Contract(
            "relations are defined for models with no encoder skip or an identity skip".into(),
        )),
    }
}

/// Builds the relation from the residual set found by training.
///
/// The residual latents must be the trailing ones, which is what the
/// ordering term produces.
pub fn build_implicit(outcome: &TrainOutcome) -> Result<ImplicitRelation> {
    let m = outcome.model.m;
    let p = outcome.report.p;
    if outcome.trivial {
        return Err(Error::TrivialSolution);
    }
    if p == m {
        return Err(Error::NothingToExtract);
    }
    if !outcome.report.residual_set.iter().copied().eq(p..m) {
        return Err(Error::Contract(format!(
            "residual latents {:?} are not the trailing {} of {m}",
            outcome.report.residual_set,
            m - p
        )));
    }
    build_implicit_with(outcome, p)
}

/// Builds the relation treating latents `p..m` as residual regardless of
/// their variances (e.g. when noise keeps them above `eps`).
pub fn build_implicit_with(outcome: &TrainOutcome, p: usize) -> Result<ImplicitRelation> {
    let model = &outcome.model;
    let (n, m) = (model.n, model.m);
    if outcome.trivial {
        return Err(Error::TrivialSolution);
    }
    if p >= m {
        return Err(Error::NothingToExtract);
    }
    if p == 0 {
        return Err(Error::Contract(
            "at least one significant latent is required".into(),
        ));
    }
    if n != m {
        return Err(Error::Contract(format!(
            "solving for residual variables needs n == m, got n = {n}, m = {m}"
        )));
    }
    let kind = residual_kind(model)?;
    let (last, hidden) = model.encoder.split_last().expect("validated model");
    let skip_r = model.encoder_skip.matrix(m, n).map(|s| s.row_block(p, m));
    Ok(ImplicitRelation {
        kind,
        n,
        p,
        hidden: hidden.to_vec(),
        a_er: last.weights.row_block(p, m),
        b_er: last.bias.as_ref().map(|b| b[p..].to_vec()),
        skip_r,
        ybar_r: outcome.report.means[p..].to_vec(),
        names: Vec::new(),
        norm: None,
    })
}

fn chain(layers: &[Layer], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in layers {
        h = layer_apply(layer, &h);
    }
    h
}

fn layer_apply(layer: &Layer, u: &[f64]) -> Vec<f64> {
    let w = &layer.weights;
    (0..w.rows())
        .map(|i| {
            let mut z: f64 = w.row(i).iter().zip(u).map(|(a, b)| a * b).sum();
            if let Some(b) = &layer.bias {
                z += b[i];
            }
            layer.activation.apply(z)
        })
        .collect()
}

fn affine(w: &Matrix, b: Option<&Vec<f64>>, h: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| {
            let z: f64 = w.row(i).iter().zip(h).map(|(a, b)| a * b).sum();
            z + b.map_or(0.0, |b| b[i])
        })
        .collect()
}

impl ImplicitRelation {
    pub fn relation_count(&self) -> usize {
        self.ybar_r.len()
    }

    pub fn with_metadata(mut self, names: Vec<String>, norm: Option<NormStats>) -> Self {
        self.names = names;
        self.norm = norm;
        self
    }

    /// Left-hand side of the relation at `x`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "relation expects {} variables, got {}",
                self.n,
                x.len()
            )));
        }
        let h = chain(&self.hidden, x);
        let mut r = affine(&self.a_er, self.b_er.as_ref(), &h);
        if let Some(s) = &self.skip_r {
            for (ri, si) in r.iter_mut().zip(affine(s, None, x)) {
                *ri += si;
            }
        }
        for (ri, yb) in r.iter_mut().zip(&self.ybar_r) {
            *ri -= yb;
        }
        Ok(r)
    }
}

pub fn relation_residual(rel: &ImplicitRelation, x: &[f64]) -> Result<Vec<f64>> {
    rel.residual(x)
}

/// Solves the relation for `x_r` given `x_p`, starting from `x0_r` (zeros by
/// default). Succeeds only with residual norm at most `1e-10`.
pub fn solve_residual(
    rel: &ImplicitRelation,
    x_p: &[f64],
    x0_r: Option<&[f64]>,
) -> Result<Vec<f64>> {
    solve_residual_with(rel, x_p, x0_r, &SolveOptions::default())
}

pub fn solve_residual_with(
    rel: &ImplicitRelation,
    x_p: &[f64],
    x0_r: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<Vec<f64>> {
    let r = rel.n - rel.p;
    if x_p.len() != rel.p {
        return Err(Error::DimensionMismatch(format!(
            "expected {} known variables, got {}",
            rel.p,
            x_p.len()
        )));
    }
    let start = match x0_r {
        Some(v) if v.len() != r => {
            return Err(Error::DimensionMismatch(format!(
                "expected {r} initial values, got {}",
                v.len()
            )))
        }
        Some(v) => v.to_vec(),
        None => vec![0.0; r],
    };
    let mut x = x_p.to_vec();
    x.resize(rel.n, 0.0);
    let f = |x_r: &[f64]| -> Vec<f64> {
        let mut full = x.clone();
        full[rel.p..].copy_from_slice(x_r);
        rel.residual(&full).expect("dimension checked")
    };
    solve_system(&f, &start, opts)
}

/// Per-sample solutions over a batch of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSolve {
    /// `(n - p) x N`; failed samples hold the solver's best iterate.
    pub values: Matrix,
    pub failures: usize,
    pub max_residual_norm: f64,
}

/// Solves every column of `x` for its residual variables. With
/// `warm_start` the sample's own residual values seed the solver, which
/// leaks the answer and is meant for debugging only.
pub fn solve_batch(rel: &ImplicitRelation, x: &Matrix, warm_start: bool) -> Result<BatchSolve> {
    if x.rows() != rel.n {
        return Err(Error::DimensionMismatch(format!(
            "relation expects {} variables, got {}",
            rel.n,
            x.rows()
        )));
    }
    let r = rel.n - rel.p;
    let sols: Vec<Result<(Vec<f64>, bool)>> = (0..x.cols())
        .into_par_iter()
        .map(|j| {
            let col = x.col(j);
            let x0 = warm_start.then(|| col[rel.p..].to_vec());
            match solve_residual(rel, &col[..rel.p], x0.as_deref()) {
                Ok(v) => Ok((v, true)),
                Err(Error::NoConvergence { best, .. }) => Ok((best, false)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut values = Matrix::zeros(r, x.cols());
    let mut failures = 0;
    let mut max_residual_norm: f64 = 0.0;
    for (j, sol) in sols.into_iter().enumerate() {
        let (v, ok) = sol?;
        if !ok {
            failures += 1;
        }
        let mut full = x.col(j);
        full[rel.p..].copy_from_slice(&v);
        max_residual_norm = max_residual_norm.max(norm2(&rel.residual(&full)?));
        values.set_col(j, &v);
    }
    Ok(BatchSolve {
        values,
        failures,
        max_residual_norm,
    })
}

/// Builds the closed-form relation from a model trained with the residual
/// inputs masked out of the first encoder layer.
pub fn build_explicit(outcome: &TrainOutcome, p: usize) -> Result<ExplicitRelation> {
    let model = &outcome.model;
    let (n, m) = (model.n, model.m);
    if model.encoder_skip != SkipKind::Identity {
        return Err(Error::Contract(
            "explicit relations need an identity encoder skip".into(),
        ));
    }
    if n != m {
        return Err(Error::Contract(format!(
            "explicit relations need n == m, got n = {n}, m = {m}"
        )));
    }
    if p == 0 || p >= n {
        return Err(Error::Contract(format!("p must be in 1..{n}, got {p}")));
    }
    let (last, hidden) = model.encoder.split_last().expect("validated model");
    if hidden.is_empty() {
        return Err(Error::Contract(
            "explicit relations need at least one hidden encoder layer".into(),
        ));
    }
    let a1 = &hidden[0].weights;
    if a1.col_block(p, n).max_abs() != 0.0 {
        return Err(Error::Contract(
            "first encoder layer still depends on the residual variables".into(),
        ));
    }
    Ok(ExplicitRelation {
        n,
        p,
        first: Layer {
            weights: a1.col_block(0, p),
            bias: hidden[0].bias.clone(),
            activation: hidden[0].activation,
        },
        hidden: hidden[1..].to_vec(),
        a_er: last.weights.row_block(p, m),
        b_er: last.bias.as_ref().map(|b| b[p..].to_vec()),
        ybar_r: outcome.report.means[p..].to_vec(),
        names: Vec::new(),
        norm: None,
    })
}

impl ExplicitRelation {
    pub fn with_metadata(mut self, names: Vec<String>, norm: Option<NormStats>) -> Self {
        self.names = names;
        self.norm = norm;
        self
    }

    /// `x_r = ybar_r - A_Er s(...s(A_1p x_p))`.
    pub fn predict(&self, x_p: &[f64]) -> Result<Vec<f64>> {
        if x_p.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "expected {} known variables, got {}",
                self.p,
                x_p.len()
            )));
        }
        let h = chain(&self.hidden, &layer_apply(&self.first, x_p));
        let t = affine(&self.a_er, self.b_er.as_ref(), &h);
        Ok(self.ybar_r.iter().zip(t).map(|(y, v)| y - v).collect())
    }

    /// Predictions for every column of `x` (only the first `p` rows are read).
    pub fn predict_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() < self.p {
            return Err(Error::DimensionMismatch(format!(
                "expected at least {} rows, got {}",
                self.p,
                x.rows()
            )));
        }
        let r = self.n - self.p;
        let mut out = Matrix::zeros(r, x.cols());
        for j in 0..x.cols() {
            let col = x.col(j);
            out.set_col(j, &self.predict(&col[..self.p])?);
        }
        Ok(out)
    }
}

pub fn explicit_predict(rel: &ExplicitRelation, x_p: &[f64]) -> Result<Vec<f64>> {
    rel.predict(x_p)
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compare {} values with {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Contract("mean squared error of nothing".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Mean squared difference between variable `target_var` of `d` and
/// `predicted`.
pub fn prediction_mse(d: &Dataset, predicted: &[f64], target_var: usize) -> Result<f64> {
    if target_var >= d.n_vars() {
        return Err(Error::Contract(format!(
            "variable {target_var} out of range for {} variables",
            d.n_vars()
        )));
    }
    mse(d.var(target_var), predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{Architecture, LossTerms};
    use crate::numeric::{Activation, Rng};
    use crate::training::report_from_latents;

    fn outcome_for(model: AutoencoderModel, x: &Matrix, p_override: Option<usize>) -> TrainOutcome {
        let y = model.encode(x).unwrap();
        let mut report = report_from_latents(&y, 1e-4);
        if let Some(p) = p_override {
            report.p = p;
            report.residual_set = (p..model.m).collect();
        }
        TrainOutcome {
            model,
            report,
            loss_terms: LossTerms {
                j: 0.0,
                j1: 0.0,
                j2: 0.0,
                j3: 0.0,
            },
            trivial: false,
            explicit_ok: None,
            restart: 0,
            converged: true,
            iterations: 0,
        }
    }

    fn random_model(arch: &Architecture, seed: u64) -> AutoencoderModel {
        AutoencoderModel::init(arch, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn raeo_zero_weights_gives_offset() {
        let mut model = random_model(&Architecture::raeo21(2, 2, 3), 1);
        model.encoder[1].weights = Matrix::zeros(2, 3);
        let x = Matrix::from_rows(&[[0.0, 1.0, 2.0], [0.5, 0.5, 0.5]]);
        let out = outcome_for(model, &x, Some(1));
        let rel = build_implicit_with(&out, 1).unwrap();
        assert_eq!(rel.kind, RelationKind::Raeo);
        assert_eq!(rel.ybar_r, vec![0.5]);
        let r = relation_residual(&rel, &[3.0, 2.0]).unwrap();
        assert!((r[0] - 1.5).abs() < 1e-15);
        let x_r = solve_residual(&rel, &[7.0], None).unwrap();
        assert!((x_r[0] - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn aeo_zero_rows_give_constant() {
        let mut model = random_model(&Architecture::aeo(2, 2, 3), 2);
        model.encoder[1].weights.row_mut(1).fill(0.0);
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let mut out = outcome_for(model, &x, Some(1));
        out.report.means[1] = 0.25;
        let rel = build_implicit_with(&out, 1).unwrap();
        for pt in [[0.0, 0.0], [1.0, -3.0]] {
            assert_eq!(rel.residual(&pt).unwrap(), vec![-0.25]);
        }
    }

    #[test]
    fn refuses_trivial_and_empty() {
        let model = random_model(&Architecture::aeo(2, 2, 3), 3);
        let x = Matrix::from_rows(&[[0.0, 1.0, 2.0], [1.0, 0.0, 3.0]]);
        let mut out = outcome_for(model, &x, None);
        assert_eq!(out.report.p, 2);
        assert!(matches!(build_implicit(&out), Err(Error::NothingToExtract)));
        out.trivial = true;
        assert!(matches!(
            build_implicit_with(&out, 1),
            Err(Error::TrivialSolution)
        ));
    }

    #[test]
    fn residual_matches_latent_deviation() {
        let arch = Architecture::raeo21(3, 3, 4);
        let model = random_model(&arch, 4);
        let x = Rng::new(5).normal_matrix(3, 12);
        let out = outcome_for(model.clone(), &x, Some(1));
        let rel = build_implicit_with(&out, 1).unwrap();
        let y = model.encode(&x).unwrap();
        let mut total = 0.0;
        for j in 0..x.cols() {
            let r = rel.residual(&x.col(j)).unwrap();
            for (k, v) in r.iter().enumerate() {
                let expect = y[(k + 1, j)] - out.report.means[k + 1];
                assert!((v - expect).abs() <= 1e-12);
                total += v * v;
            }
        }
        let expect: f64 = out.report.variances[1..].iter().sum::<f64>() * 11.0;
        assert!((total - expect).abs() <= 1e-10 * expect);
    }

    #[test]
    fn explicit_agrees_with_solver() {
        let arch = Architecture::raeo21(2, 2, 5);
        let mut model = random_model(&arch, 6);
        for r in 0..5 {
            model.encoder[0].weights[(r, 1)] = 0.0;
        }
        let x = Rng::new(7).normal_matrix(2, 10);
        let out = outcome_for(model, &x, Some(1));
        let imp = build_implicit_with(&out, 1).unwrap();
        let exp = build_explicit(&out, 1).unwrap();
        for j in 0..x.cols() {
            let a = explicit_predict(&exp, &[x[(0, j)]]).unwrap();
            let b = solve_residual(&imp, &[x[(0, j)]], None).unwrap();
            assert!((a[0] - b[0]).abs() <= 1e-8);
        }
    }

    #[test]
    fn explicit_requires_mask() {
        let model = random_model(&Architecture::raeo21(2, 2, 3), 8);
        let x = Rng::new(9).normal_matrix(2, 5);
        let out = outcome_for(model, &x, Some(1));
        assert!(matches!(build_explicit(&out, 1), Err(Error::Contract(_))));
        let aeo = outcome_for(random_model(&Architecture::aeo(2, 2, 3), 8), &x, Some(1));
        assert!(matches!(build_explicit(&aeo, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn explicit_zero_weights() {
        let rel = ExplicitRelation {
            n: 2,
            p: 1,
            first: Layer {
                weights: Matrix::zeros(3, 1),
                bias: None,
                activation: Activation::Tanh,
            },
            hidden: vec![],
            a_er: Matrix::zeros(1, 3),
            b_er: None,
            ybar_r: vec![0.7],
            names: vec![],
            norm: None,
        };
        assert_eq!(rel.predict(&[4.0]).unwrap(), vec![0.7]);
    }

    #[test]
    fn mse_cases() {
        let d = Dataset::new(Matrix::from_rows(&[[1.0, 2.0, 3.0]]), vec!["a".into()]).unwrap();
        assert_eq!(prediction_mse(&d, &[1.0, 2.0, 3.0], 0).unwrap(), 0.0);
        assert!((prediction_mse(&d, &[1.5, 2.5, 3.5], 0).unwrap() - 0.25).abs() < 1e-15);
        assert!(prediction_mse(&d, &[1.0], 0).is_err());
        assert!(prediction_mse(&d, &[1.0, 2.0, 3.0], 1).is_err());
    }

    #[test]
    fn batch_solve_without_root_counts_failures() {
        let mut model = random_model(&Architecture::aeo(2, 2, 3), 10);
        model.encoder[1].weights.row_mut(1).fill(0.0);
        let x = Rng::new(11).normal_matrix(2, 4);
        let mut out = outcome_for(model, &x, Some(1));
        out.report.means[1] = 1.0;
        let rel = build_implicit_with(&out, 1).unwrap();
        let sol = solve_batch(&rel, &x, false).unwrap();
        assert_eq!(sol.failures, 4);
    }

    #[test]
    fn relation_json_round_trip() {
        let model = random_model(&Architecture::raeo21(2, 2, 3), 12);
        let x = Rng::new(13).normal_matrix(2, 6);
        let rel = build_implicit_with(&outcome_for(model, &x, Some(1)), 1).unwrap();
        let text = serde_json::to_string(&rel).unwrap();
        let back: ImplicitRelation = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rel);
        assert_eq!(
            back.residual(&[0.3, -0.1]).unwrap(),
            rel.residual(&[0.3, -0.1]).unwrap()
        );
    }
}
