//! Fitting ordered autoencoders and reading their latent variances.

use std::ops::Range;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Architecture, AutoencoderModel, LossConfig, LossTerms, SkipKind};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numeric::{norm2, Matrix, Rng};
use crate::optimize::{minimize, MinimizeOptions, Objective};

/// Tolerance on adjacent variance pairs when deciding whether latents are
/// ordered.
pub const ORDER_TOL: f64 = 1e-9;

/// Default variance threshold below which a latent counts as residual.
pub const DEFAULT_EPS: f64 = 1e-4;

const INIT_STREAM: u64 = 1;
const RETRAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: MinimizeOptions,
    pub seed: u64,
    /// Independent initializations from seeds `seed, seed + 1, ...`; the
    /// lowest final loss wins.
    pub restarts: usize,
    pub eps: f64,
}

impl TrainConfig {
    pub fn new(arch: Architecture, loss: LossConfig, seed: u64) -> Self {
        TrainConfig {
            arch,
            loss,
            optimizer: MinimizeOptions::default(),
            seed,
            restarts: 5,
            eps: DEFAULT_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate(self.arch.m)?;
        if self.restarts == 0 {
            return Err(Error::Contract("at least one restart is required".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Contract("eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentReport {
    /// Sample variances (N - 1 denominator).
    pub variances: Vec<f64>,
    pub means: Vec<f64>,
    /// Variances are nonincreasing within [`ORDER_TOL`].
    pub ordered: bool,
    /// Zero-based indices of latents with variance below `eps`.
    pub residual_set: Vec<usize>,
    /// Number of significant latents, `m - |residual_set|`.
    pub p: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: AutoencoderModel,
    pub report: LatentReport,
    pub loss_terms: LossTerms,
    pub trivial: bool,
    /// Set by [`retrain_explicit`]: whether the residual latents reached
    /// variance below `eps` with the residual inputs masked out.
    pub explicit_ok: Option<bool>,
    pub restart: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivialThresholds {
    /// Per-entry scale; the Frobenius threshold is `weight * sqrt(entries)`.
    pub weight: f64,
    pub mean: f64,
}

impl Default for TrivialThresholds {
    fn default() -> Self {
        TrivialThresholds {
            weight: 1e-6,
            mean: 1e-6,
        }
    }
}

pub fn variance_report(model: &AutoencoderModel, d: &Dataset, eps: f64) -> Result<LatentReport> {
    let y = model.encode(&d.x)?;
    Ok(report_from_latents(&y, eps))
}

pub fn report_from_latents(y: &Matrix, eps: f64) -> LatentReport {
    let variances = y.row_variances();
    let means = y.row_means();
    let ordered = variances.windows(2).all(|w| w[0] + ORDER_TOL >= w[1]);
    let residual_set: Vec<usize> = (0..variances.len())
        .filter(|&i| variances[i] < eps)
        .collect();
    let p = variances.len() - residual_set.len();
    LatentReport {
        variances,
        means,
        ordered,
        residual_set,
        p,
        eps,
    }
}

/// Flags the degenerate optimum where the trailing `m - p` rows of the last
/// encoder weight and the corresponding latent means all vanish.
pub fn detect_trivial_at(
    model: &AutoencoderModel,
    means: &[f64],
    p: usize,
    thresholds: &TrivialThresholds,
) -> bool {
    let m = model.m;
    if p >= m {
        return false;
    }
    let a_e = &model.encoder.last().expect("validated model").weights;
    let a_er = a_e.row_block(p, m);
    let limit = thresholds.weight * (a_er.len() as f64).sqrt();
    a_er.frobenius() < limit && means[p..].iter().all(|v| v.abs() < thresholds.mean)
}

pub fn detect_trivial(outcome: &TrainOutcome, thresholds: &TrivialThresholds) -> bool {
    detect_trivial_at(
        &outcome.model,
        &outcome.report.means,
        outcome.report.p,
        thresholds,
    )
}

/// Loss over a subset of the model parameters.
///
/// Coordinates outside `free` keep the template's values. When `sphere` is
/// set, that contiguous block of the full parameter vector is used
/// normalized to unit length, the gradient is projected onto the sphere's
/// tangent space and [`Objective::project`] renormalizes accepted steps.
struct TrainObjective<'a> {
    template: &'a AutoencoderModel,
    base: Vec<f64>,
    x: &'a Matrix,
    loss: &'a LossConfig,
    free: Vec<usize>,
    /// Block in full-parameter coordinates and the matching range in the
    /// free vector.
    sphere: Option<(Range<usize>, Range<usize>)>,
}

impl<'a> TrainObjective<'a> {
    fn new(
        template: &'a AutoencoderModel,
        x: &'a Matrix,
        loss: &'a LossConfig,
        fixed: &[usize],
        sphere: Option<Range<usize>>,
    ) -> Self {
        let n = template.n_params();
        let mut is_fixed = vec![false; n];
        for &i in fixed {
            is_fixed[i] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
        let sphere = sphere.map(|full| {
            let start = free
                .iter()
                .position(|&i| i == full.start)
                .expect("sphere block is free");
            let len = full.len();
            debug_assert!(free[start..start + len].iter().copied().eq(full.clone()));
            (full, start..start + len)
        });
        TrainObjective {
            template,
            base: template.params(),
            x,
            loss,
            free,
            sphere,
        }
    }

    fn gather(&self, theta: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| theta[i]).collect()
    }

    fn expand(&self, z: &[f64]) -> Vec<f64> {
        let mut theta = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            theta[i] = z[k];
        }
        if let Some((full, _)) = &self.sphere {
            let len = norm2(&theta[full.clone()]);
            theta[full.clone()].iter_mut().for_each(|v| *v /= len);
        }
        theta
    }

    fn model_at(&self, z: &[f64]) -> AutoencoderModel {
        self.template
            .with_params(&self.expand(z))
            .expect("parameter count is fixed")
    }
}

impl Objective for TrainObjective<'_> {
    fn value_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let model = self.model_at(z);
        let (terms, g_full) = match model.loss_grad(self.x, self.loss) {
            Ok(r) => r,
            Err(_) => return (f64::NAN, vec![f64::NAN; z.len()]),
        };
        let mut g = self.gather(&g_full);
        if let Some((_, local)) = &self.sphere {
            let block = &z[local.clone()];
            let len = norm2(block);
            let dir: Vec<f64> = block.iter().map(|v| v / len).collect();
            let gb = &mut g[local.clone()];
            let radial: f64 = gb.iter().zip(&dir).map(|(a, b)| a * b).sum();
            for (gi, di) in gb.iter_mut().zip(&dir) {
                *gi = (*gi - radial * di) / len;
            }
        }
        (terms.j, g)
    }

    fn project(&self, z: &mut [f64]) -> bool {
        let Some((_, local)) = &self.sphere else {
            return false;
        };
        let block = &mut z[local.clone()];
        let len = norm2(block);
        if (len - 1.0).abs() <= 1e-14 {
            return false;
        }
        block.iter_mut().for_each(|v| *v /= len);
        true
    }
}

struct Fit {
    model: AutoencoderModel,
    loss: f64,
    converged: bool,
    iterations: usize,
}

fn fit_once(
    start: &AutoencoderModel,
    d: &Dataset,
    cfg: &TrainConfig,
    fixed: &[usize],
    sphere: Option<Range<usize>>,
) -> Result<Fit> {
    let obj = TrainObjective::new(start, &d.x, &cfg.loss, fixed, sphere);
    let z0 = obj.gather(&obj.base);
    let res = minimize(&obj, &z0, &cfg.optimizer)?;
    if !res.loss.is_finite() {
        return Err(Error::Numerical("training loss is not finite".into()));
    }
    Ok(Fit {
        model: obj.model_at(&res.params),
        loss: res.loss,
        converged: res.converged,
        iterations: res.iterations,
    })
}

fn check_inputs(d: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if d.n_vars() != cfg.arch.n {
        return Err(Error::DimensionMismatch(format!(
            "architecture expects {} variables, dataset has {}",
            cfg.arch.n,
            d.n_vars()
        )));
    }
    if d.n_samples() <= cfg.arch.m {
        return Err(Error::Contract(format!(
            "need more samples ({}) than latent variables ({})",
            d.n_samples(),
            cfg.arch.m
        )));
    }
    if !d.is_normalized() {
        warn!("training on a dataset without normalization statistics");
    }
    Ok(())
}

/// Runs every restart (in parallel) and keeps the lowest final loss; ties go
/// to the earliest restart.
fn best_of_restarts(
    d: &Dataset,
    cfg: &TrainConfig,
    start: impl Fn(usize) -> Result<AutoencoderModel> + Sync,
    fixed: &[usize],
    sphere: Option<Range<usize>>,
) -> Result<(usize, Fit)> {
    let fits: Vec<Result<Fit>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let init = start(k)?;
            fit_once(&init, d, cfg, fixed, sphere.clone())
        })
        .collect();
    let mut best: Option<(usize, Fit)> = None;
    let mut last_err = None;
    for (k, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(f) => {
                debug!("restart {k}: loss {:.6e} converged {}", f.loss, f.converged);
                if best.as_ref().is_none_or(|(_, b)| f.loss < b.loss) {
                    best = Some((k, f));
                }
            }
            Err(e) => {
                warn!("restart {k} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Numerical(format!(
            "training failed on all {} restarts: {}",
            cfg.restarts,
            last_err.map_or_else(String::new, |e| e.to_string())
        ))
    })
}

fn outcome_from_fit(
    d: &Dataset,
    cfg: &TrainConfig,
    restart: usize,
    fit: Fit,
) -> Result<TrainOutcome> {
    let report = variance_report(&fit.model, d, cfg.eps)?;
    let loss_terms = fit.model.loss(&d.x, &cfg.loss)?;
    let trivial = detect_trivial_at(
        &fit.model,
        &report.means,
        report.p,
        &TrivialThresholds::default(),
    );
    Ok(TrainOutcome {
        model: fit.model,
        report,
        loss_terms,
        trivial,
        explicit_ok: None,
        restart,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

fn init_model(cfg: &TrainConfig, k: usize) -> Result<AutoencoderModel> {
    let mut rng = Rng::with_stream(cfg.seed.wrapping_add(k as u64), INIT_STREAM);
    AutoencoderModel::init(&cfg.arch, &mut rng)
}

/// Minimizes the ordered-variance loss over all trainable parameters.
pub fn train(d: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_inputs(d, cfg)?;
    let (restart, fit) = best_of_restarts(d, cfg, |k| init_model(cfg, k), &[], None)?;
    outcome_from_fit(d, cfg, restart, fit)
}

/// Full-parameter range of the trailing `m - p` rows of the last encoder
/// weight.
fn residual_rows_range(model: &AutoencoderModel, p: usize) -> Range<usize> {
    let last = model.encoder.len() - 1;
    let w = model.encoder_weight_range(last);
    let cols = model.encoder[last].weights.cols();
    w.start + p * cols..w.end
}

/// Retrains a trivial outcome with the residual encoder rows held at unit
/// Frobenius norm. Non-trivial outcomes are returned unchanged.
pub fn retrain_normalized(
    d: &Dataset,
    cfg: &TrainConfig,
    prev: &TrainOutcome,
) -> Result<TrainOutcome> {
    if !prev.trivial {
        return Ok(prev.clone());
    }
    retrain_normalized_with(d, cfg, prev, prev.report.p)
}

/// Same as [`retrain_normalized`] with the residual set taken as latents
/// `p..m` and no check of the trivial flag.
pub fn retrain_normalized_with(
    d: &Dataset,
    cfg: &TrainConfig,
    prev: &TrainOutcome,
    p: usize,
) -> Result<TrainOutcome> {
    check_inputs(d, cfg)?;
    if p == 0 || p >= prev.model.m {
        return Err(Error::Contract(format!(
            "norm-constrained retraining needs 1 <= p < m, got p = {p}"
        )));
    }
    let block = residual_rows_range(&prev.model, p);
    let start = |k: usize| -> Result<AutoencoderModel> {
        let mut rng = Rng::with_stream(cfg.seed.wrapping_add(k as u64), RETRAIN_STREAM);
        let mut theta = prev.model.params();
        let fresh: Vec<f64> = block.clone().map(|_| rng.standard_normal()).collect();
        let len = norm2(&fresh);
        for (i, v) in block.clone().zip(fresh) {
            theta[i] = v / len;
        }
        prev.model.with_params(&theta)
    };
    let (restart, fit) = best_of_restarts(d, cfg, start, &[], Some(block.clone()))?;
    outcome_from_fit(d, cfg, restart, fit)
}

/// Retrains a residual (identity encoder skip) model with the first-layer
/// columns of the last `n - p` inputs fixed at zero, so the residual latents
/// depend on the residual inputs only through the skip.
pub fn retrain_explicit(d: &Dataset, cfg: &TrainConfig, p: usize) -> Result<TrainOutcome> {
    check_inputs(d, cfg)?;
    let arch = &cfg.arch;
    if arch.encoder_skip != SkipKind::Identity {
        return Err(Error::Contract(
            "explicit relations need an identity encoder skip".into(),
        ));
    }
    if arch.n != arch.m {
        return Err(Error::Contract(
            "explicit relations need as many latents as inputs".into(),
        ));
    }
    if p == 0 || p >= arch.n {
        return Err(Error::Contract(format!(
            "p must be in 1..{}, got {p}",
            arch.n
        )));
    }
    let probe = init_model(cfg, 0)?;
    let w = probe.encoder_weight_range(0);
    let cols = probe.encoder[0].weights.cols();
    let rows = probe.encoder[0].weights.rows();
    let masked: Vec<usize> = (0..rows)
        .flat_map(|r| (p..cols).map(move |c| w.start + r * cols + c))
        .collect();

    let start = |k: usize| -> Result<AutoencoderModel> {
        let model = init_model(cfg, k)?;
        let mut theta = model.params();
        for &i in &masked {
            theta[i] = 0.0;
        }
        model.with_params(&theta)
    };
    let (restart, fit) = best_of_restarts(d, cfg, start, &masked, None)?;
    let mut outcome = outcome_from_fit(d, cfg, restart, fit)?;
    let ok = outcome.report.variances[p..].iter().all(|v| *v < cfg.eps);
    outcome.explicit_ok = Some(ok);
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_two_var, normalize};
    use crate::numeric::Activation;

    fn two_var_config(arch: Architecture, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(
            arch,
            LossConfig {
                alpha: 1.0,
                beta: 0.5,
                gamma: 0.1,
                q: vec![1.0, 100.0],
            },
            seed,
        );
        cfg.restarts = 2;
        cfg.optimizer.max_iter = 300;
        cfg
    }

    fn data(seed: u64) -> Dataset {
        normalize(&gen_two_var(60, &mut Rng::new(seed), 1.0).unwrap()).unwrap()
    }

    #[test]
    fn report_by_definition() {
        let y = Matrix::from_fn(3, 4, |i, j| match i {
            0 => [1.0, -1.0, 2.0, -2.0][j],
            1 => [0.5, -0.5, 0.0, 0.0][j],
            _ => [1e-3, -1e-3, 0.0, 0.0][j],
        });
        let r = report_from_latents(&y, 1e-4);
        assert!(r.ordered);
        assert_eq!(r.residual_set, vec![2]);
        assert_eq!(r.p, 2);
        assert_eq!(r.p + r.residual_set.len(), 3);
    }

    #[test]
    fn unordered_report() {
        let y = Matrix::from_rows(&[[0.5, -0.5, 0.0], [0.9, -0.9, 0.0]]);
        assert!(!report_from_latents(&y, 1e-4).ordered);
    }

    #[test]
    fn constant_latents_are_all_residual() {
        let y = Matrix::from_rows(&[[3.0, 3.0, 3.0], [-1.0, -1.0, -1.0]]);
        let r = report_from_latents(&y, 1e-4);
        assert_eq!(r.p, 0);
        assert_eq!(r.residual_set, vec![0, 1]);
    }

    #[test]
    fn trivial_detection_on_hand_built_model() {
        let mut model =
            AutoencoderModel::init(&Architecture::aeo(2, 2, 5), &mut Rng::new(1)).unwrap();
        model.encoder[1].weights.row_mut(1).fill(0.0);
        assert!(detect_trivial_at(
            &model,
            &[0.3, 0.0],
            1,
            &TrivialThresholds::default()
        ));
        model.encoder[1].weights.row_mut(1).fill(0.1 / 5f64.sqrt());
        assert!(!detect_trivial_at(
            &model,
            &[0.3, 0.0],
            1,
            &TrivialThresholds::default()
        ));
        assert!(!detect_trivial_at(
            &model,
            &[0.3, 0.0],
            2,
            &TrivialThresholds::default()
        ));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let d = data(4);
        let cfg = two_var_config(Architecture::raeo21(2, 2, 5), 11);
        let a = train(&d, &cfg).unwrap();
        let b = train(&d, &cfg).unwrap();
        assert_eq!(a, b);
        let init = init_model(&cfg, a.restart).unwrap();
        assert!(a.loss_terms.j <= init.loss(&d.x, &cfg.loss).unwrap().j);
        assert_eq!(a.report.p + a.report.residual_set.len(), 2);
    }

    #[test]
    fn no_ordering_term_still_reports() {
        let d = data(5);
        let mut cfg = two_var_config(Architecture::aeo(2, 2, 5), 3);
        cfg.loss.beta = 0.0;
        cfg.restarts = 1;
        let out = train(&d, &cfg).unwrap();
        assert_eq!(out.report.variances.len(), 2);
        assert_eq!(out.report.means.len(), 2);
    }

    #[test]
    fn retrain_normalized_enforces_unit_norm() {
        let d = data(6);
        let cfg = two_var_config(Architecture::aeo(2, 2, 5), 7);
        let mut model = init_model(&cfg, 0).unwrap();
        model.encoder[1].weights.row_mut(1).fill(0.0);
        let prev = TrainOutcome {
            report: variance_report(&model, &d, cfg.eps).unwrap(),
            loss_terms: model.loss(&d.x, &cfg.loss).unwrap(),
            model,
            trivial: true,
            explicit_ok: None,
            restart: 0,
            converged: true,
            iterations: 0,
        };
        let out = retrain_normalized(&d, &cfg, &prev).unwrap();
        let a_er = out.model.encoder[1].weights.row_block(1, 2);
        assert!((a_er.frobenius() - 1.0).abs() <= 1e-9);
        assert!(!out.trivial);

        let unchanged = retrain_normalized(&d, &cfg, &out).unwrap();
        assert_eq!(unchanged, out);
    }

    #[test]
    fn explicit_retrain_keeps_mask() {
        let d = data(8);
        let cfg = two_var_config(Architecture::raeo21(2, 2, 5), 9);
        let out = retrain_explicit(&d, &cfg, 1).unwrap();
        let a1 = &out.model.encoder[0].weights;
        for r in 0..a1.rows() {
            assert_eq!(a1[(r, 1)], 0.0);
        }
        assert!(out.explicit_ok.is_some());
    }

    #[test]
    fn explicit_retrain_requires_identity_skip() {
        let d = data(8);
        let cfg = two_var_config(Architecture::aeo(2, 2, 5), 9);
        assert!(matches!(
            retrain_explicit(&d, &cfg, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn rejects_mismatched_dataset() {
        let d = data(1);
        let cfg = two_var_config(Architecture::aeo(3, 3, 4), 1);
        assert!(train(&d, &cfg).is_err());
        let mut bad = two_var_config(Architecture::aeo(2, 2, 4), 1);
        bad.restarts = 0;
        assert!(train(&d, &bad).is_err());
        let mut general = two_var_config(Architecture::aeo(2, 2, 4), 1);
        general.arch.extraction_mode = false;
        general.arch.hidden_activation = Activation::Tanh;
        general.restarts = 1;
        assert!(train(&d, &general).is_ok());
    }
}
