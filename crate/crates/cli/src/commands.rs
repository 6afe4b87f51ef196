//! The verbs of the `orderedae` binary. Each writes its artifacts under the
//! configured output directory and returns a short human-readable summary.

use std::fs;
use std::path::Path;

use log::info;
use orderedae::autoencoder::{AutoencoderModel, LossTerms};
use orderedae::dataset::{save_csv, NormStats};
use orderedae::numeric::Rng;
use orderedae::optimize::check_gradient;
use orderedae::training::{LatentReport, TrainOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentId, MethodKind};
use crate::error::{CliError, CliResult};
use crate::experiment::{
    autoencoder_metrics, explicit_point, implicit_relation, load_data, pca_metrics, train_point,
    LoadedData, Metrics, TrainedPoint,
};
use crate::plot::{plot_csv, Style};

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub config: ExperimentConfig,
    pub q: f64,
    pub names: Vec<String>,
    pub norm: Option<NormStats>,
    pub model: AutoencoderModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub q: f64,
    pub report: LatentReport,
    pub loss_terms: LossTerms,
    pub trivial: bool,
    pub retrained: bool,
    pub explicit_ok: Option<bool>,
    pub restart: usize,
    pub converged: bool,
    pub iterations: usize,
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn prepare(cfg: &mut ExperimentConfig) -> CliResult<LoadedData> {
    let loaded = load_data(cfg)?;
    if matches!(cfg.experiment, ExperimentId::Csv { .. }) {
        cfg.fit_to_width(loaded.data.n_vars());
    }
    cfg.validate(loaded.data.n_vars())?;
    Ok(loaded)
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> CliResult<String> {
    if let ExperimentId::Csv { .. } = cfg.experiment {
        return Err(CliError::Usage("generate needs two_var or five_var".into()));
    }
    let loaded = load_data(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let data_path = cfg.out_dir.join("data.csv");
    save_csv(&loaded.raw, &data_path)?;
    write_json(&cfg.out_dir.join("manifest.json"), &loaded.manifest)?;
    Ok(format!(
        "wrote {} samples of {} variables to {}",
        loaded.raw.n_samples(),
        loaded.raw.n_vars(),
        data_path.display()
    ))
}

fn report_artifact(point: &TrainedPoint) -> ReportArtifact {
    let o = &point.outcome;
    ReportArtifact {
        q: point.q,
        report: o.report.clone(),
        loss_terms: o.loss_terms,
        trivial: o.trivial,
        retrained: point.retrained,
        explicit_ok: o.explicit_ok,
        restart: o.restart,
        converged: o.converged,
        iterations: o.iterations,
    }
}

pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<String> {
    let mut cfg = cfg.clone();
    let loaded = prepare(&mut cfg)?;
    if cfg.method == MethodKind::Pca {
        return cmd_train_pca(&cfg, &loaded);
    }
    let point = train_point(&cfg, &loaded.data, cfg.q)?;
    ensure_dir(&cfg.out_dir)?;
    let artifact = ModelArtifact {
        config: cfg.clone(),
        q: cfg.q,
        names: loaded.data.names.clone(),
        norm: loaded.data.norm.clone(),
        model: point.outcome.model.clone(),
    };
    write_json(&cfg.out_dir.join(MODEL_FILE), &artifact)?;
    write_json(&cfg.out_dir.join(REPORT_FILE), &report_artifact(&point))?;
    let r = &point.outcome.report;
    Ok(format!(
        "latent variances {:?}; p = {}; ordered = {}; trivial = {}; J = {:.6}",
        r.variances, r.p, r.ordered, point.outcome.trivial, point.outcome.loss_terms.j
    ))
}

fn cmd_train_pca(cfg: &ExperimentConfig, loaded: &LoadedData) -> CliResult<String> {
    let res = pca_metrics(cfg, loaded)?;
    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("pca_relation.json"), &res.relation)?;
    Ok(format!(
        "latent variances {:?}; prediction MSE {}; reconstruction MSE {}",
        res.latent_variances,
        opt(res.metrics.pred_mse),
        res.metrics.recon_mse
    ))
}

/// Row of the sweep report; `error` is set when training failed at this q.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub q: f64,
    pub point: Option<TrainedPoint>,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

pub fn sweep_rows(cfg: &ExperimentConfig, loaded: &LoadedData) -> Vec<SweepRow> {
    cfg.q_sweep
        .par_iter()
        .map(|&q| {
            let run = || -> CliResult<(TrainedPoint, Metrics)> {
                let point = train_point(cfg, &loaded.data, q)?;
                let metrics = autoencoder_metrics(cfg, loaded, &point.outcome)?;
                Ok((point, metrics))
            };
            match run() {
                Ok((point, metrics)) => SweepRow {
                    q,
                    point: Some(point),
                    metrics: Some(metrics),
                    error: None,
                },
                Err(e) => SweepRow {
                    q,
                    point: None,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> CliResult<String> {
    let mut cfg = cfg.clone();
    if cfg.method == MethodKind::Pca {
        return Err(CliError::Usage("sweep needs an autoencoder method".into()));
    }
    if cfg.q_sweep.is_empty() {
        return Err(CliError::Usage("q_sweep is empty".into()));
    }
    let loaded = prepare(&mut cfg)?;
    let rows = sweep_rows(&cfg, &loaded);
    ensure_dir(&cfg.out_dir)?;
    let m = loaded.data.n_vars();

    let mut header = vec!["q".to_string()];
    header.extend((1..=m).map(|i| format!("V_y{i}")));
    header.extend((1..=m).map(|i| format!("mean_y{i}")));
    for h in [
        "J",
        "J1",
        "J2",
        "J3",
        "p",
        "ordered",
        "trivial",
        "retrained",
        "pred_mse",
        "recon_mse",
        "solver_failures",
        "error",
    ] {
        header.push(h.into());
    }
    let mut table = Vec::new();
    for row in &rows {
        let mut rec = vec![num(row.q)];
        match (&row.point, &row.metrics) {
            (Some(pt), Some(mt)) => {
                let o = &pt.outcome;
                rec.extend(o.report.variances.iter().copied().map(num));
                rec.extend(o.report.means.iter().copied().map(num));
                let t = &o.loss_terms;
                rec.extend([t.j, t.j1, t.j2, t.j3].map(num));
                rec.push(o.report.p.to_string());
                rec.push(o.report.ordered.to_string());
                rec.push(o.trivial.to_string());
                rec.push(pt.retrained.to_string());
                rec.push(opt(mt.pred_mse));
                rec.push(num(mt.recon_mse));
                rec.push(mt.solver_failures.to_string());
                rec.push(mt.note.clone().unwrap_or_default());
            }
            _ => {
                rec.resize(header.len() - 1, String::new());
                rec.push(row.error.clone().unwrap_or_default());
            }
        }
        table.push(rec);
    }
    let sweep_path = cfg.out_dir.join("sweep.csv");
    write_csv(&sweep_path, &header, &table)?;

    let v_cols: Vec<String> = (1..=m).map(|i| format!("V_y{i}")).collect();
    let v_refs: Vec<&str> = v_cols.iter().map(String::as_str).collect();
    plot_csv(
        &sweep_path,
        &cfg.out_dir.join("variances.svg"),
        "Latent variances",
        "q",
        &v_refs,
        Style::Line,
        true,
    )?;
    plot_csv(
        &sweep_path,
        &cfg.out_dir.join("loss_terms.svg"),
        "Loss terms",
        "q",
        &["J1", "J2", "J3"],
        Style::Line,
        true,
    )?;
    plot_csv(
        &sweep_path,
        &cfg.out_dir.join("pred_mse.svg"),
        "Prediction MSE",
        "q",
        &["pred_mse"],
        Style::Line,
        true,
    )?;

    let shown = rows
        .iter()
        .filter(|r| r.metrics.is_some())
        .find(|r| r.q == cfg.q)
        .or_else(|| rows.iter().rev().find(|r| r.metrics.is_some()));
    if let Some(row) = shown {
        let mt = row.metrics.as_ref().expect("filtered");
        write_series(
            &cfg,
            &loaded,
            mt.predicted.as_deref(),
            &mt.reconstructed,
            "",
        )?;
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    Ok(format!(
        "swept {} values of q ({failed} failed); report in {}",
        rows.len(),
        sweep_path.display()
    ))
}

/// Prediction scatter and reconstruction series for one model.
fn write_series(
    cfg: &ExperimentConfig,
    loaded: &LoadedData,
    predicted: Option<&[f64]>,
    reconstructed: &[f64],
    prefix: &str,
) -> CliResult<()> {
    let d = &loaded.data;
    let names = &d.names;
    let t = cfg.target_var;
    let (x_name, t_name) = (&names[0], &names[t]);
    if let Some(pred) = predicted {
        let header = vec![
            "sample".to_string(),
            x_name.clone(),
            t_name.clone(),
            format!("{t_name}_predicted"),
        ];
        let rows: Vec<Vec<String>> = (0..d.n_samples())
            .map(|j| {
                vec![
                    j.to_string(),
                    num(d.x[(0, j)]),
                    num(d.x[(t, j)]),
                    num(pred[j]),
                ]
            })
            .collect();
        let path = cfg.out_dir.join(format!("{prefix}predictions.csv"));
        write_csv(&path, &header, &rows)?;
        plot_csv(
            &path,
            &cfg.out_dir.join(format!("{prefix}predictions.svg")),
            "Actual and predicted values",
            x_name,
            &[t_name.as_str(), &format!("{t_name}_predicted")],
            Style::Scatter,
            false,
        )?;
    }
    if prefix.is_empty() {
        let header = vec![
            "sample".to_string(),
            t_name.clone(),
            format!("{t_name}_reconstructed"),
        ];
        let rows: Vec<Vec<String>> = (0..d.n_samples())
            .map(|j| vec![j.to_string(), num(d.x[(t, j)]), num(reconstructed[j])])
            .collect();
        let path = cfg.out_dir.join("reconstruction.csv");
        write_csv(&path, &header, &rows)?;
        plot_csv(
            &path,
            &cfg.out_dir.join("reconstruction.svg"),
            "Actual and reconstructed values",
            "sample",
            &[t_name.as_str(), &format!("{t_name}_reconstructed")],
            Style::Line,
            false,
        )?;
    }
    Ok(())
}

pub fn load_trained(dir: &Path) -> CliResult<(ModelArtifact, ReportArtifact)> {
    let model: ModelArtifact = read_json(&dir.join(MODEL_FILE))?;
    let report: ReportArtifact = read_json(&dir.join(REPORT_FILE))?;
    model.model.validate()?;
    Ok((model, report))
}

fn outcome_from_artifacts(model: &ModelArtifact, report: &ReportArtifact) -> TrainOutcome {
    TrainOutcome {
        model: model.model.clone(),
        report: report.report.clone(),
        loss_terms: report.loss_terms,
        trivial: report.trivial,
        explicit_ok: report.explicit_ok,
        restart: report.restart,
        converged: report.converged,
        iterations: report.iterations,
    }
}

/// Extracts relations from the model saved by `train` in `cfg.out_dir`.
///
/// The run's own configuration is read from the artifact; only the output
/// directory and the retry flag come from `cfg`.
pub fn cmd_extract(cfg: &ExperimentConfig, explicit: bool) -> CliResult<String> {
    let (artifact, report) = load_trained(&cfg.out_dir)?;
    let mut run = artifact.config.clone();
    run.out_dir = cfg.out_dir.clone();
    run.retry_normalized |= cfg.retry_normalized;
    if explicit && run.method != MethodKind::Raeo21 {
        return Err(CliError::Usage(
            "--explicit requires a model trained with --method raeo21".into(),
        ));
    }
    let loaded = prepare(&mut run)?;
    let mut outcome = outcome_from_artifacts(&artifact, &report);
    let mut lines = Vec::new();
    if outcome.trivial {
        if !run.retry_normalized {
            return Err(orderedae::Error::TrivialSolution.into());
        }
        let point = train_point(&run, &loaded.data, artifact.q)?;
        lines.push("trivial solution replaced by norm-constrained retraining".to_string());
        outcome = point.outcome;
    }
    let relation = implicit_relation(&run, &loaded, &outcome)?;
    write_json(&run.out_dir.join("relation.json"), &relation)?;
    let metrics = autoencoder_metrics(&run, &loaded, &outcome)?;
    write_series(
        &run,
        &loaded,
        metrics.predicted.as_deref(),
        &metrics.reconstructed,
        "",
    )?;
    lines.push(format!(
        "implicit relation: prediction MSE {} ({} solver failures)",
        opt(metrics.pred_mse),
        metrics.solver_failures
    ));

    if explicit {
        let res = explicit_point(&run, &loaded, artifact.q)?;
        write_json(&run.out_dir.join("explicit_relation.json"), &res.relation)?;
        write_series(&run, &loaded, Some(&res.predicted), &[], "explicit_")?;
        lines.push(format!(
            "explicit relation: explicit_ok = {}, residual variances {:?}, prediction MSE {}",
            res.outcome.explicit_ok.unwrap_or(false),
            &res.outcome.report.variances[run.p(loaded.data.n_vars())..],
            res.pred_mse
        ));
    }
    Ok(lines.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub method: MethodKind,
    pub pred_mse: Option<f64>,
    pub recon_mse: f64,
    pub pred_mse_noise_free: Option<f64>,
    pub solver_failures: usize,
    pub seed: u64,
    pub restarts: usize,
    pub restart: Option<usize>,
    pub trivial: bool,
    pub retrained: bool,
    pub note: Option<String>,
}

/// Method configuration for a comparison row: the preset for the method
/// with the run-level settings of `cfg`.
fn row_config(cfg: &ExperimentConfig, method: MethodKind) -> ExperimentConfig {
    ExperimentConfig {
        experiment: cfg.experiment.clone(),
        method,
        n_samples: cfg.n_samples,
        half_range: cfg.half_range,
        noise_var: cfg.noise_var,
        q: cfg.q,
        eps: cfg.eps,
        seed: cfg.seed,
        restarts: cfg.restarts,
        optimizer: cfg.optimizer.clone(),
        relations: cfg.relations,
        target_var: cfg.target_var,
        retry_normalized: true,
        out_dir: cfg.out_dir.clone(),
        ..ExperimentConfig::preset(cfg.experiment.clone(), method)
    }
}

pub fn table1_rows(cfg: &ExperimentConfig) -> CliResult<Vec<Table1Row>> {
    if cfg.experiment != ExperimentId::FiveVar {
        return Err(CliError::Usage(
            "table1 runs on the five_var experiment".into(),
        ));
    }
    let loaded = load_data(cfg)?;
    cfg.validate(loaded.data.n_vars())?;
    [MethodKind::Pca, MethodKind::Aeo, MethodKind::Raeo21]
        .par_iter()
        .map(|&method| -> CliResult<Table1Row> {
            let rc = row_config(cfg, method);
            let mut row = Table1Row {
                method,
                pred_mse: None,
                recon_mse: f64::NAN,
                pred_mse_noise_free: None,
                solver_failures: 0,
                seed: rc.seed,
                restarts: rc.restarts,
                restart: None,
                trivial: false,
                retrained: false,
                note: None,
            };
            let metrics = if method == MethodKind::Pca {
                pca_metrics(&rc, &loaded)?.metrics
            } else {
                let point = train_point(&rc, &loaded.data, rc.q)?;
                row.restart = Some(point.outcome.restart);
                row.trivial = point.outcome.trivial;
                row.retrained = point.retrained;
                autoencoder_metrics(&rc, &loaded, &point.outcome)?
            };
            row.pred_mse = metrics.pred_mse;
            row.pred_mse_noise_free = metrics.pred_mse_noise_free;
            row.recon_mse = metrics.recon_mse;
            row.solver_failures = metrics.solver_failures;
            row.note = metrics.note;
            Ok(row)
        })
        .collect()
}

pub fn cmd_table1(cfg: &ExperimentConfig) -> CliResult<String> {
    let rows = table1_rows(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let header: Vec<String> = [
        "method",
        "pred_mse",
        "recon_mse",
        "pred_mse_noise_free",
        "solver_failures",
        "seed",
        "restarts",
        "restart",
        "trivial",
        "retrained",
        "note",
    ]
    .map(String::from)
    .to_vec();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                opt(r.pred_mse),
                num(r.recon_mse),
                opt(r.pred_mse_noise_free),
                r.solver_failures.to_string(),
                r.seed.to_string(),
                r.restarts.to_string(),
                r.restart.map(|k| k.to_string()).unwrap_or_default(),
                r.trivial.to_string(),
                r.retrained.to_string(),
                r.note.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let path = cfg.out_dir.join("table1.csv");
    write_csv(&path, &header, &table)?;
    let mut out = format!("{:<8}{:>14}{:>14}\n", "method", "pred MSE", "recon MSE");
    for r in &rows {
        out.push_str(&format!(
            "{:<8}{:>14}{:>14.4}\n",
            r.method.to_string(),
            r.pred_mse.map_or("-".into(), |v| format!("{v:.4}")),
            r.recon_mse
        ));
    }
    out.push_str(&format!("written to {}", path.display()));
    Ok(out)
}

/// Finite-difference step for `check-grad`. The loss is a sum over samples
/// with q-weighted variances, so it reaches the thousands and a 1e-6 step
/// sits in the round-off regime.
const CHECK_GRAD_STEP: f64 = 1e-5;

/// Compares the backpropagated loss gradient with central differences at
/// random small parameters.
pub fn cmd_check_grad(cfg: &ExperimentConfig) -> CliResult<String> {
    let mut cfg = cfg.clone();
    if cfg.method == MethodKind::Pca {
        return Err(CliError::Usage(
            "check-grad needs an autoencoder method".into(),
        ));
    }
    let loaded = prepare(&mut cfg)?;
    let n = loaded.data.n_vars();
    let tc = cfg.train_config(n, cfg.q)?;
    let model = AutoencoderModel::init(&tc.arch, &mut Rng::with_stream(cfg.seed, 7))?;
    let x = &loaded.data.x;
    let f = |theta: &[f64]| -> (f64, Vec<f64>) {
        let m = model.with_params(theta).expect("same shape");
        let (t, g) = m.loss_grad(x, &tc.loss).expect("validated inputs");
        (t.j, g)
    };
    let err = check_gradient(&f, &model.params(), CHECK_GRAD_STEP);
    info!("gradient check over {} parameters", model.n_params());
    if err > 1e-5 {
        return Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {err:.3e}"
        )));
    }
    Ok(format!("max relative gradient error {err:.3e}"))
}
