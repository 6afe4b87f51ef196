//! Data acquisition, training runs and the metrics reported by the commands.

use log::{info, warn};
use orderedae::dataset::{apply_norm, gen_five_var, gen_two_var, load_csv, normalize, Dataset};
use orderedae::extraction::{
    build_explicit, build_implicit_with, mse, solve_batch, ExplicitRelation, ImplicitRelation,
};
use orderedae::numeric::Rng;
use orderedae::pca::{extract_linear_model_fixed, fit_pca, LinearRelation};
use orderedae::training::{
    detect_trivial_at, retrain_explicit, retrain_normalized_with, train, TrainOutcome,
    TrivialThresholds,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentId, MethodKind};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub n_samples: usize,
    pub half_range: f64,
    pub noise_var: f64,
    pub names: Vec<String>,
}

pub struct LoadedData {
    pub raw: Dataset,
    /// Normalized copy used for training and every reported metric.
    pub data: Dataset,
    /// Noise-free counterpart of generated noisy data, normalized with the
    /// noisy data's statistics.
    pub clean: Option<Dataset>,
    pub manifest: GenerationManifest,
}

pub fn load_data(cfg: &ExperimentConfig) -> CliResult<LoadedData> {
    let gen = |noise_var: f64| -> CliResult<Dataset> {
        let mut rng = Rng::new(cfg.seed);
        Ok(match cfg.experiment {
            ExperimentId::TwoVar => gen_two_var(cfg.n_samples, &mut rng, cfg.half_range)?,
            ExperimentId::FiveVar => {
                gen_five_var(cfg.n_samples, &mut rng, cfg.half_range, noise_var)?
            }
            ExperimentId::Csv { .. } => unreachable!("files are not generated"),
        })
    };
    let (raw, clean_raw) = match &cfg.experiment {
        ExperimentId::Csv { path } => (load_csv(path)?, None),
        ExperimentId::TwoVar => (gen(0.0)?, None),
        ExperimentId::FiveVar if cfg.noise_var > 0.0 => (gen(cfg.noise_var)?, Some(gen(0.0)?)),
        ExperimentId::FiveVar => (gen(0.0)?, None),
    };
    let data = normalize(&raw)?;
    let stats = data.norm.clone().expect("normalize records statistics");
    let clean = clean_raw.map(|c| apply_norm(&c, stats));
    let manifest = GenerationManifest {
        experiment: cfg.experiment.clone(),
        seed: cfg.seed,
        n_samples: raw.n_samples(),
        half_range: cfg.half_range,
        noise_var: match cfg.experiment {
            ExperimentId::TwoVar => 0.0,
            _ => cfg.noise_var,
        },
        names: raw.names.clone(),
    };
    Ok(LoadedData {
        raw,
        data,
        clean,
        manifest,
    })
}

/// Trained model at one `q`, with the trivial flag evaluated at the
/// configured relation count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPoint {
    pub q: f64,
    pub outcome: TrainOutcome,
    pub retrained: bool,
}

pub fn train_point(cfg: &ExperimentConfig, data: &Dataset, q: f64) -> CliResult<TrainedPoint> {
    let n = data.n_vars();
    let tc = cfg.train_config(n, q)?;
    let p = cfg.p(n);
    let mut outcome = train(data, &tc)?;
    outcome.trivial = detect_trivial_at(
        &outcome.model,
        &outcome.report.means,
        p,
        &TrivialThresholds::default(),
    );
    let mut retrained = false;
    if outcome.trivial {
        if cfg.retry_normalized {
            info!("q = {q}: trivial solution, retraining with unit-norm residual rows");
            outcome = retrain_normalized_with(data, &tc, &outcome, p)?;
            retrained = true;
        } else {
            warn!("q = {q}: trivial solution (residual encoder rows and means vanish)");
        }
    }
    Ok(TrainedPoint {
        q,
        outcome,
        retrained,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean squared error of the solved-for target variable.
    pub pred_mse: Option<f64>,
    /// Same prediction scored against noise-free generated data.
    pub pred_mse_noise_free: Option<f64>,
    pub recon_mse: f64,
    pub solver_failures: usize,
    pub predicted: Option<Vec<f64>>,
    pub reconstructed: Vec<f64>,
    pub note: Option<String>,
}

fn score(loaded: &LoadedData, target: usize, predicted: &[f64]) -> CliResult<(f64, Option<f64>)> {
    let pred = mse(loaded.data.var(target), predicted)?;
    let clean = match &loaded.clean {
        Some(c) => Some(mse(c.var(target), predicted)?),
        None => None,
    };
    Ok((pred, clean))
}

pub fn implicit_relation(
    cfg: &ExperimentConfig,
    loaded: &LoadedData,
    outcome: &TrainOutcome,
) -> CliResult<ImplicitRelation> {
    let p = cfg.p(loaded.data.n_vars());
    Ok(build_implicit_with(outcome, p)?
        .with_metadata(loaded.data.names.clone(), loaded.data.norm.clone()))
}

pub fn autoencoder_metrics(
    cfg: &ExperimentConfig,
    loaded: &LoadedData,
    outcome: &TrainOutcome,
) -> CliResult<Metrics> {
    let d = &loaded.data;
    let p = cfg.p(d.n_vars());
    let target = cfg.target_var;
    let xhat = outcome.model.forward(&d.x)?.xhat;
    let reconstructed = xhat.row(target).to_vec();
    let recon_mse = mse(d.var(target), &reconstructed)?;
    let mut m = Metrics {
        pred_mse: None,
        pred_mse_noise_free: None,
        recon_mse,
        solver_failures: 0,
        predicted: None,
        reconstructed,
        note: None,
    };
    match implicit_relation(cfg, loaded, outcome) {
        Ok(rel) => {
            let sol = solve_batch(&rel, &d.x, false)?;
            let predicted = sol.values.row(target - p).to_vec();
            let (pred, clean) = score(loaded, target, &predicted)?;
            m.pred_mse = Some(pred);
            m.pred_mse_noise_free = clean;
            m.solver_failures = sol.failures;
            m.predicted = Some(predicted);
            if sol.failures > 0 {
                m.note = Some(format!(
                    "solver did not converge on {} samples",
                    sol.failures
                ));
            }
        }
        Err(e @ (CliError::Numerical(_) | CliError::Usage(_))) => m.note = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(m)
}

pub struct PcaResult {
    pub relation: LinearRelation,
    pub latent_variances: Vec<f64>,
    pub metrics: Metrics,
}

pub fn pca_metrics(cfg: &ExperimentConfig, loaded: &LoadedData) -> CliResult<PcaResult> {
    let d = &loaded.data;
    let n = d.n_vars();
    let p = cfg.p(n);
    let target = cfg.target_var;
    let model = fit_pca(d, n)?;
    let relation = extract_linear_model_fixed(&model, cfg.relations)?;
    let mut predicted = Vec::with_capacity(d.n_samples());
    for j in 0..d.n_samples() {
        let x = d.sample(j);
        predicted.push(relation.solve_for_residual_vars(&x[..p])?[target - p]);
    }
    let kept = model.truncated(p)?;
    let xhat = kept.reconstruct(&kept.transform(&d.x)?)?;
    let reconstructed = xhat.row(target).to_vec();
    let recon_mse = mse(d.var(target), &reconstructed)?;
    let (pred, clean) = score(loaded, target, &predicted)?;
    Ok(PcaResult {
        relation,
        latent_variances: model.latent_variances.clone(),
        metrics: Metrics {
            pred_mse: Some(pred),
            pred_mse_noise_free: clean,
            recon_mse,
            solver_failures: 0,
            predicted: Some(predicted),
            reconstructed,
            note: None,
        },
    })
}

pub struct ExplicitResult {
    pub outcome: TrainOutcome,
    pub relation: ExplicitRelation,
    pub predicted: Vec<f64>,
    pub pred_mse: f64,
}

/// Retrains with the residual inputs masked out of the first layer and
/// evaluates the closed-form relation on the training inputs.
pub fn explicit_point(
    cfg: &ExperimentConfig,
    loaded: &LoadedData,
    q: f64,
) -> CliResult<ExplicitResult> {
    if cfg.method != MethodKind::Raeo21 {
        return Err(CliError::Usage(
            "explicit extraction requires the residual (raeo21) architecture".into(),
        ));
    }
    let d = &loaded.data;
    let n = d.n_vars();
    let p = cfg.p(n);
    let tc = cfg.train_config(n, q)?;
    let outcome = retrain_explicit(d, &tc, p)?;
    let relation = build_explicit(&outcome, p)?.with_metadata(d.names.clone(), d.norm.clone());
    let values = relation.predict_batch(&d.x)?;
    let predicted = values.row(cfg.target_var - p).to_vec();
    let pred_mse = mse(d.var(cfg.target_var), &predicted)?;
    Ok(ExplicitResult {
        outcome,
        relation,
        predicted,
        pred_mse,
    })
}
