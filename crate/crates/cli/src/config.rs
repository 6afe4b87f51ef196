//! Experiment configuration: a JSON file laid over per-experiment presets,
//! then command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use orderedae::autoencoder::{Architecture, LossConfig};
use orderedae::optimize::MinimizeOptions;
use orderedae::training::{TrainConfig, DEFAULT_EPS};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExperimentId {
    TwoVar,
    FiveVar,
    Csv { path: PathBuf },
}

impl FromStr for ExperimentId {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "two_var" => Ok(ExperimentId::TwoVar),
            "five_var" => Ok(ExperimentId::FiveVar),
            _ if s.ends_with(".csv") => Ok(ExperimentId::Csv { path: s.into() }),
            _ => Err(CliError::Usage(format!(
                "unknown experiment '{s}' (expected two_var, five_var or a .csv path)"
            ))),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentId::TwoVar => f.write_str("two_var"),
            ExperimentId::FiveVar => f.write_str("five_var"),
            ExperimentId::Csv { path } => write!(f, "{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Pca,
    Aeo,
    #[value(name = "raeo21")]
    Raeo21,
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodKind::Pca => "pca",
            MethodKind::Aeo => "aeo",
            MethodKind::Raeo21 => "raeo21",
        })
    }
}

/// `q_i = constant_i + linear_i * q + square_i * q^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSchedule {
    pub constant: Vec<f64>,
    pub linear: Vec<f64>,
    pub square: Vec<f64>,
}

impl QSchedule {
    pub fn len(&self) -> usize {
        self.constant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constant.is_empty()
    }

    pub fn weights(&self, q: f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.constant[i] + self.linear[i] * q + self.square[i] * q * q)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub method: MethodKind,
    pub n_samples: usize,
    /// Generated inputs are uniform on `[-half_range, half_range]`.
    pub half_range: f64,
    pub noise_var: f64,
    /// Width of the single hidden layer in encoder and decoder.
    pub hidden: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub q_schedule: QSchedule,
    /// `q` for single runs (train, extract, table1).
    pub q: f64,
    pub q_sweep: Vec<f64>,
    pub eps: f64,
    pub seed: u64,
    pub restarts: usize,
    pub optimizer: MinimizeOptions,
    /// Number of trailing variables solved for during extraction.
    pub relations: usize,
    /// Variable scored by prediction and reconstruction errors.
    pub target_var: usize,
    pub retry_normalized: bool,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(experiment: ExperimentId, method: MethodKind) -> Self {
        let base = ExperimentConfig {
            experiment: experiment.clone(),
            method,
            n_samples: 100,
            half_range: 1.0,
            noise_var: 0.0,
            hidden: 5,
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.1,
            q_schedule: QSchedule {
                constant: vec![1.0, 0.0],
                linear: vec![0.0, 0.0],
                square: vec![0.0, 1.0],
            },
            q: 10.0,
            q_sweep: (1..=10).map(f64::from).collect(),
            eps: DEFAULT_EPS,
            seed: 0,
            restarts: 5,
            optimizer: MinimizeOptions::default(),
            relations: 1,
            target_var: 1,
            retry_normalized: false,
            out_dir: PathBuf::from("out"),
        };
        match experiment {
            ExperimentId::TwoVar => base,
            ExperimentId::FiveVar => {
                let (hidden, alpha, beta, gamma) = match method {
                    MethodKind::Raeo21 => (5, 0.3, 0.1, 0.12),
                    _ => (6, 0.2, 0.3, 0.08),
                };
                ExperimentConfig {
                    n_samples: 300,
                    noise_var: 0.1,
                    hidden,
                    alpha,
                    beta,
                    gamma,
                    q_schedule: QSchedule {
                        constant: vec![0.1, 0.0, 0.0, 0.0, 0.0],
                        linear: vec![0.0, 0.1, 0.5, 4.0, 5.0],
                        square: vec![0.0; 5],
                    },
                    relations: 2,
                    target_var: 3,
                    ..base
                }
            }
            // resized once the file's width is known
            ExperimentId::Csv { .. } => base,
        }
    }

    /// Default Q schedule and widths for `n` variables read from a file:
    /// `q_i = 1 + i q`, hidden width `2n + 1`, last variable as target.
    pub fn fit_to_width(&mut self, n: usize) {
        if self.q_schedule.len() == n {
            return;
        }
        self.q_schedule = QSchedule {
            constant: vec![1.0; n],
            linear: (0..n).map(|i| i as f64).collect(),
            square: vec![0.0; n],
        };
        self.hidden = 2 * n + 1;
        self.target_var = n.saturating_sub(1);
    }

    /// Preset for the experiment and method named in `file` (or the given
    /// fallbacks), with every field present in `file` overriding it.
    pub fn from_json_overlay(
        file: Option<&Value>,
        experiment: Option<ExperimentId>,
        method: Option<MethodKind>,
    ) -> CliResult<Self> {
        let pick = |key: &str| file.and_then(|v| v.get(key)).cloned();
        let experiment = match (experiment, pick("experiment")) {
            (Some(e), _) => e,
            (None, Some(v)) => serde_json::from_value(v)
                .map_err(|e| CliError::Usage(format!("invalid experiment in config: {e}")))?,
            (None, None) => ExperimentId::TwoVar,
        };
        let method = match (method, pick("method")) {
            (Some(m), _) => m,
            (None, Some(v)) => serde_json::from_value(v)
                .map_err(|e| CliError::Usage(format!("invalid method in config: {e}")))?,
            (None, None) => MethodKind::Aeo,
        };
        let preset = Self::preset(experiment.clone(), method);
        let Some(file) = file else {
            return Ok(preset);
        };
        let Value::Object(overrides) = file else {
            return Err(CliError::Usage(
                "config file must hold a JSON object".into(),
            ));
        };
        let mut merged = serde_json::to_value(&preset)?;
        let target = merged
            .as_object_mut()
            .expect("struct serializes to an object");
        for (k, v) in overrides {
            if !target.contains_key(k) {
                return Err(CliError::Usage(format!("unknown config field '{k}'")));
            }
            target.insert(k.clone(), v.clone());
        }
        target.insert("experiment".into(), serde_json::to_value(&experiment)?);
        target.insert("method".into(), serde_json::to_value(method)?);
        serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(
        path: Option<&Path>,
        experiment: Option<ExperimentId>,
        method: Option<MethodKind>,
    ) -> CliResult<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                Some(
                    serde_json::from_str::<Value>(&text)
                        .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?,
                )
            }
            None => None,
        };
        Self::from_json_overlay(file.as_ref(), experiment, method)
    }

    pub fn validate(&self, n_vars: usize) -> CliResult<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        let s = &self.q_schedule;
        if s.linear.len() != s.len() || s.square.len() != s.len() {
            return usage("q_schedule vectors must have equal length".into());
        }
        if s.len() != n_vars {
            return usage(format!(
                "q_schedule has {} entries for {n_vars} variables",
                s.len()
            ));
        }
        if self.relations == 0 || self.relations >= n_vars {
            return usage(format!(
                "relations must be in 1..{n_vars}, got {}",
                self.relations
            ));
        }
        if self.target_var < n_vars - self.relations || self.target_var >= n_vars {
            return usage(format!(
                "target_var {} is not one of the {} solved-for variables",
                self.target_var, self.relations
            ));
        }
        if self.hidden == 0 {
            return usage("hidden width must be positive".into());
        }
        if !(self.eps > 0.0) {
            return usage("eps must be positive".into());
        }
        Ok(())
    }

    /// Number of significant variables used for extraction.
    pub fn p(&self, n_vars: usize) -> usize {
        n_vars - self.relations
    }

    pub fn architecture(&self, n_vars: usize) -> CliResult<Architecture> {
        match self.method {
            MethodKind::Aeo => Ok(Architecture::aeo(n_vars, n_vars, self.hidden)),
            MethodKind::Raeo21 => Ok(Architecture::raeo21(n_vars, n_vars, self.hidden)),
            MethodKind::Pca => Err(CliError::Usage(
                "PCA has no autoencoder architecture".into(),
            )),
        }
    }

    pub fn train_config(&self, n_vars: usize, q: f64) -> CliResult<TrainConfig> {
        Ok(TrainConfig {
            arch: self.architecture(n_vars)?,
            loss: LossConfig {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma,
                q: self.q_schedule.weights(q),
            },
            optimizer: self.optimizer.clone(),
            seed: self.seed,
            restarts: self.restarts,
            eps: self.eps,
        })
    }
}
