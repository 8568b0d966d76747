//! Invariance-inducing state estimator.
//!
//! Fused stream features `H` are split by an encoder into a task code `e1`
//! and a residual code `e2`. An LSTM estimator labels each frame from a window
//! of `e1`. A reconstructor rebuilds `H` from `e2` and a dropout-corrupted
//! `e1`, two disentanglers try to predict each code from the other, and a
//! discriminator tries to recover the technique label from `e1`. Training
//! alternates between the estimator side and the adversary side.

mod embed;
mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use embed::{export_embeddings, write_embeddings, EmbeddingRecord};
pub use loss::{dropout_mask, LossBreakdown, LossNodes};
pub use model::{Dense, Estimator, Forward, Model, Parts, CHECKPOINT_VERSION};
pub use train::{train_minimax, AdversaryLosses, EpochTrace, TrainTrace};

use crate::dataset::{WindowMode, DEFAULT_T_OBS};
use crate::error::{Error, Result};

/// Parameter group names.
pub mod groups {
    pub const FEATURES: &str = "features";
    pub const ENCODER: &str = "E";
    pub const ESTIMATOR: &str = "M";
    pub const RECONSTRUCTOR: &str = "R";
    pub const F1: &str = "f1";
    pub const F2: &str = "f2";
    pub const DISCRIMINATOR: &str = "D";

    /// Groups updated in the estimator phase.
    pub const ESTIMATOR_SIDE: [&str; 4] = [FEATURES, ENCODER, ESTIMATOR, RECONSTRUCTOR];
    /// Groups updated in the adversary phase.
    pub const ADVERSARY_SIDE: [&str; 3] = [F1, F2, DISCRIMINATOR];
}

/// Model variant: no adversaries, nuisance adversaries only, or nuisance plus technique.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Na,
    No,
    Full,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::Na, VariantKind::No, VariantKind::Full];

    pub fn is_adversarial(self) -> bool {
        self != VariantKind::Na
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "na" => Ok(Self::Na),
            "no" => Ok(Self::No),
            "full" => Ok(Self::Full),
            _ => Err(Error::config(format!("unknown variant {s:?}; expected na, no or full"))),
        }
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Na => "na",
            Self::No => "no",
            Self::Full => "full",
        })
    }
}

/// Weights of the loss terms and the dropout rate applied to `e1` before reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// State estimation.
    pub alpha: f64,
    /// Reconstruction.
    pub beta: f64,
    /// Disentanglers.
    pub gamma: f64,
    /// Technique discriminator.
    pub delta: f64,
    pub dropout: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.5, gamma: 0.1, delta: 0.1, dropout: 0.4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || [self.beta, self.gamma, self.delta].iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::config("loss weights must be non-negative with alpha > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Zeroes the weights of terms the variant does not have.
    pub fn for_variant(mut self, kind: VariantKind) -> Self {
        match kind {
            VariantKind::Na => {
                self.beta = 0.0;
                self.gamma = 0.0;
                self.delta = 0.0;
            }
            VariantKind::No => self.delta = 0.0,
            VariantKind::Full => {}
        }
        self
    }
}

/// Sizes of every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vis_channels: usize,
    pub kin_channels: usize,
    pub evt_channels: usize,
    pub states: usize,
    /// Technique classes seen by the discriminator.
    pub techniques: usize,
    pub vis_hidden: usize,
    pub kin_hidden: usize,
    pub evt_hidden: usize,
    pub attention_dim: usize,
    /// Size of each of `e1` and `e2`.
    pub latent: usize,
    pub estimator_hidden: usize,
    pub t_obs: usize,
    pub mode: WindowMode,
    /// Seed of the parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vis_channels: 8,
            kin_channels: 8,
            evt_channels: 4,
            states: 8,
            techniques: 3,
            vis_hidden: 32,
            kin_hidden: 32,
            evt_hidden: 20,
            attention_dim: 16,
            latent: 16,
            estimator_hidden: 32,
            t_obs: DEFAULT_T_OBS,
            mode: WindowMode::Causal,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn feature_size(&self) -> usize {
        self.vis_hidden + self.kin_hidden + self.evt_hidden
    }

    pub fn validate(&self, kind: VariantKind) -> Result<()> {
        let sizes = [
            self.vis_channels,
            self.kin_channels,
            self.evt_channels,
            self.vis_hidden,
            self.kin_hidden,
            self.evt_hidden,
            self.attention_dim,
            self.latent,
            self.estimator_hidden,
            self.t_obs,
        ];
        if sizes.contains(&0) {
            return Err(Error::config("model sizes must be positive"));
        }
        if self.states < 2 {
            return Err(Error::config(format!("need at least 2 states, got {}", self.states)));
        }
        if kind == VariantKind::Full && self.techniques < 2 {
            return Err(Error::config(format!("full variant needs at least 2 techniques, got {}", self.techniques)));
        }
        Ok(())
    }
}

/// Alternating schedule and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Estimator-phase batches per round.
    pub p1_batches: usize,
    /// Adversary-phase batches per round.
    pub p2_batches: usize,
    /// Trials per batch.
    pub batch_size: usize,
    /// Frames sampled per trial for the losses; 0 uses every frame.
    pub frames_per_trial: usize,
    pub learning_rate: f64,
    pub adversary_learning_rate: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            p1_batches: 1,
            p2_batches: 5,
            batch_size: 1,
            frames_per_trial: 0,
            learning_rate: 5e-3,
            adversary_learning_rate: 5e-3,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self, kind: VariantKind) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.p1_batches == 0 {
            return Err(Error::config("epochs, batch size and estimator batches must be positive"));
        }
        if kind.is_adversarial() && self.p2_batches == 0 {
            return Err(Error::config("adversarial variants need at least one adversary batch per round"));
        }
        if !(self.learning_rate > 0.0 && self.adversary_learning_rate > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("clip norm must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
