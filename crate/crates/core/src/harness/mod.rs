//! Experiment orchestration and reporting.
//!
//! Everything a run needs lives in one [`ExperimentConfig`] read from TOML.
//! Reports are versioned JSON with floats rounded to 6 significant digits
//! and no wall-clock fields, so a report is byte-identical for a given
//! config and seed.

mod analysis;
mod eval;
mod experiment;
mod gradients;
mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use analysis::{
    disentanglement_report, k_selection_report, probe_accuracy, technique_probe, DisentanglementReport, KSelectionReport,
    ProbeConfig, ProbeReport,
};
pub use eval::{confusion_matrix, evaluate, framewise_accuracy, mean_std, EvalReport, FoldResult};
pub use experiment::{audit_fold, cluster_techniques, model_config_for, run_ablation, run_experiment, AblationReport, Delta, TechniqueClustering};
pub use gradients::{gradient_suite, GradientEntry, GradientSuiteReport};
pub use report::{read_report, report_bytes, report_kind, round_sig, write_report, ReportKind, REPORT_VERSION};

use crate::clustering::{DtwOptions, DEFAULT_RESTARTS};
use crate::dataset::{GeneratorConfig, SplitSpec};
use crate::error::{Error, Result};
use crate::invariance::{LossWeights, ModelConfig, TrainSchedule};

/// How technique labels are derived from training kinematics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    /// Skips the k scan and clusters with this k.
    pub fixed_k: Option<usize>,
    pub znormalize: bool,
    /// Sakoe-Chiba band half-width in frames.
    pub band: Option<usize>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { k_min: 2, k_max: 6, restarts: DEFAULT_RESTARTS, fixed_k: None, znormalize: true, band: None }
    }
}

impl ClusteringConfig {
    pub fn dtw_options(&self) -> DtwOptions {
        DtwOptions { znormalize: self.znormalize, band: self.band }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(Error::config(format!("cluster range [{}, {}] needs 2 <= k_min <= k_max", self.k_min, self.k_max)));
        }
        if self.restarts == 0 {
            return Err(Error::config("clustering needs at least one restart"));
        }
        if self.fixed_k.is_some_and(|k| k < 2) {
            return Err(Error::config("fixed k must be at least 2"));
        }
        Ok(())
    }
}

/// Full description of an experiment. Model stream sizes, state count and
/// technique count are overwritten from the data at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub schedule: TrainSchedule,
    pub split: SplitSpec,
    pub clustering: ClusteringConfig,
}

impl Default for ExperimentConfig {
    /// Desk-scale settings: one ablation over three folds takes seconds on one core.
    fn default() -> Self {
        Self {
            seed: 0,
            generator: GeneratorConfig {
                states: 6,
                techniques: 3,
                users: 5,
                trials: 15,
                duration_range: (0.8, 2.4),
                segments: 6,
                ..GeneratorConfig::default()
            },
            model: ModelConfig {
                vis_hidden: 8,
                kin_hidden: 8,
                evt_hidden: 8,
                attention_dim: 8,
                latent: 8,
                estimator_hidden: 16,
                ..ModelConfig::default()
            },
            weights: LossWeights::default(),
            schedule: TrainSchedule { epochs: 30, ..TrainSchedule::default() },
            split: SplitSpec::Louo,
            clustering: ClusteringConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::Parse { path: path.into(), line, msg: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.weights.validate()?;
        self.clustering.validate()
    }
}
