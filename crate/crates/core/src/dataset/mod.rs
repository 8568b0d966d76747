//! Synthetic multi-stream trials with ground-truth state, technique and nuisance
//! factors, plus storage, resampling, windowing and cross-validation splits.

mod generate;
mod io;
mod split;
mod sync;

use serde::{Deserialize, Serialize};

pub use generate::{build_task, generate, generate_from_config};
pub use io::{load, save, FORMAT_VERSION};
pub use split::{split, split_kfold, split_leave_one_technique_out, split_louo, Fold, SplitSpec};
pub use sync::{resample, resample_timed, window, window_indices, WindowMode, WindowedSample, DEFAULT_T_OBS};

use crate::clustering::TrialSeries;
use crate::error::{Error, Result};
use crate::Tensor;

/// Output frame rate of every stored trial.
pub const FRAME_RATE: f64 = 10.0;

/// Task structure shared by all techniques.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFsm {
    pub states: usize,
    /// Mean state duration in seconds.
    pub mean_durations: Vec<f64>,
    /// Relative half-width of the uniform duration jitter.
    pub jitter: f64,
    /// `states×kin` base kinematics per state.
    pub kin_templates: Vec<Vec<f64>>,
    /// `states×vis` visual feature per state.
    pub vis_templates: Vec<Vec<f64>>,
    /// `states×evt` binary event pattern per state.
    pub evt_templates: Vec<Vec<u8>>,
    /// Per-channel oscillation frequency of the kinematics in Hz.
    pub kin_frequencies: Vec<f64>,
    pub motion_amplitude: f64,
}

impl TaskFsm {
    pub fn validate(&self) -> Result<()> {
        let s = self.states;
        if s < 2 {
            return Err(Error::config(format!("task needs at least 2 states, got {s}")));
        }
        if self.mean_durations.len() != s || self.mean_durations.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::config("state durations must be positive, one per state"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::config(format!("duration jitter {} outside [0, 1)", self.jitter)));
        }
        let kin = self.kin_channels();
        if self.kin_templates.len() != s
            || self.vis_templates.len() != s
            || self.evt_templates.len() != s
            || self.kin_templates.iter().any(|r| r.len() != kin)
            || self.vis_templates.iter().any(|r| r.len() != self.vis_channels())
            || self.evt_templates.iter().any(|r| r.len() != self.evt_channels())
            || self.kin_frequencies.len() != kin
        {
            return Err(Error::config("emission templates do not match state and channel counts"));
        }
        if kin == 0 || self.vis_channels() == 0 || self.evt_channels() == 0 {
            return Err(Error::config("every stream needs at least one channel"));
        }
        Ok(())
    }

    pub fn kin_channels(&self) -> usize {
        self.kin_templates.first().map_or(0, Vec::len)
    }

    pub fn vis_channels(&self) -> usize {
        self.vis_templates.first().map_or(0, Vec::len)
    }

    pub fn evt_channels(&self) -> usize {
        self.evt_templates.first().map_or(0, Vec::len)
    }
}

/// How one technique performs the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TechniqueSpec {
    pub id: usize,
    /// Row-stochastic `states×states` transition matrix.
    pub transitions: Vec<Vec<f64>>,
    /// Starting state of every trial.
    pub start: usize,
    /// Per kinematics channel oscillation speed multiplier.
    pub speed: Vec<f64>,
    /// Per kinematics channel oscillation amplitude multiplier.
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    /// `states×kin` additive offsets that depend on technique and state.
    pub style: Vec<Vec<f64>>,
}

impl TechniqueSpec {
    pub fn validate(&self, fsm: &TaskFsm) -> Result<()> {
        let s = fsm.states;
        if self.transitions.len() != s || self.start >= s {
            return Err(Error::config(format!("technique {}: transition matrix is not {s}×{s}", self.id)));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != s || row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("technique {}: transition row {i} is not stochastic", self.id)));
            }
        }
        let kin = fsm.kin_channels();
        if self.speed.len() != kin || self.amplitude.len() != kin || self.phase.len() != kin {
            return Err(Error::config(format!("technique {}: style vectors need {kin} entries", self.id)));
        }
        if self.speed.iter().chain(&self.amplitude).any(|&m| !(m > 0.0)) {
            return Err(Error::config(format!("technique {}: multipliers must be positive", self.id)));
        }
        if self.style.len() != s || self.style.iter().any(|r| r.len() != kin) {
            return Err(Error::config(format!("technique {}: style offsets must be {s}×{kin}", self.id)));
        }
        Ok(())
    }
}

/// Signal-level nuisance factors drawn per trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceSpec {
    /// Half-width of the per-channel additive offset.
    pub offset: f64,
    /// Range of the per-channel multiplicative gain.
    pub gain: (f64, f64),
    /// Observation noise standard deviation for kinematics.
    pub noise: f64,
    /// Observation noise standard deviation for visual features.
    pub vis_noise: f64,
    /// Amplitude of the slow linear drift over a trial.
    pub drift: f64,
    /// Probability that an active event frame is dropped.
    pub evt_dropout: f64,
    /// Scale of a per-user offset shared by all of that user's trials.
    pub user_offset: f64,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        Self { offset: 0.5, gain: (0.8, 1.2), noise: 0.1, vis_noise: 0.3, drift: 0.2, evt_dropout: 0.05, user_offset: 0.2 }
    }
}

impl NuisanceSpec {
    pub fn identity() -> Self {
        Self { offset: 0.0, gain: (1.0, 1.0), noise: 0.0, vis_noise: 0.0, drift: 0.0, evt_dropout: 0.0, user_offset: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let non_neg = [self.offset, self.noise, self.vis_noise, self.drift, self.user_offset];
        if non_neg.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::config("nuisance scales must be non-negative"));
        }
        if !(self.gain.0 > 0.0 && self.gain.0 <= self.gain.1) {
            return Err(Error::config(format!("gain range {:?} is invalid", self.gain)));
        }
        if !(0.0..=1.0).contains(&self.evt_dropout) {
            return Err(Error::config(format!("event dropout {} outside [0, 1]", self.evt_dropout)));
        }
        Ok(())
    }
}

/// Knobs from which the task, techniques and trials are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub states: usize,
    pub techniques: usize,
    pub users: usize,
    pub trials: usize,
    pub kin_channels: usize,
    pub vis_channels: usize,
    pub evt_channels: usize,
    /// Mean state durations are spread evenly over this range (seconds).
    pub duration_range: (f64, f64),
    pub duration_jitter: f64,
    /// Probability of following the technique's preferred next state.
    pub route_fidelity: f64,
    /// Adjacent swaps applied to the shared route to derive each technique's route.
    pub route_swaps: usize,
    /// Number of kinematics channels carrying technique-by-state offsets.
    pub style_channels: usize,
    pub style_strength: f64,
    pub speed_spread: f64,
    pub amplitude_spread: f64,
    pub motion_amplitude: f64,
    /// Segments walked per trial.
    pub segments: usize,
    pub nuisance: NuisanceSpec,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            states: 8,
            techniques: 3,
            users: 5,
            trials: 30,
            kin_channels: 8,
            vis_channels: 8,
            evt_channels: 4,
            duration_range: (1.0, 7.0),
            duration_jitter: 0.2,
            route_fidelity: 0.9,
            route_swaps: 2,
            style_channels: 3,
            style_strength: 1.0,
            speed_spread: 0.3,
            amplitude_spread: 0.3,
            motion_amplitude: 0.3,
            segments: 8,
            nuisance: NuisanceSpec::default(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states < 2 {
            return Err(Error::config(format!("need at least 2 states, got {}", self.states)));
        }
        if self.techniques == 0 || self.users == 0 || self.trials < self.users {
            return Err(Error::config(format!(
                "need trials ≥ users ≥ 1 and at least one technique (trials {}, users {}, techniques {})",
                self.trials, self.users, self.techniques
            )));
        }
        if self.kin_channels == 0 || self.vis_channels == 0 || self.evt_channels == 0 {
            return Err(Error::config("every stream needs at least one channel"));
        }
        if self.style_channels > self.kin_channels {
            return Err(Error::config("more style channels than kinematics channels"));
        }
        let (lo, hi) = self.duration_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("duration range {:?} is invalid", self.duration_range)));
        }
        if !(0.0..=1.0).contains(&self.route_fidelity) {
            return Err(Error::config("route fidelity must be a probability"));
        }
        if !(0.0..1.0).contains(&self.speed_spread) || !(0.0..1.0).contains(&self.amplitude_spread) {
            return Err(Error::config("speed and amplitude spreads must lie in [0, 1)"));
        }
        if self.segments == 0 {
            return Err(Error::config("trials need at least one segment"));
        }
        self.nuisance.validate()
    }
}

/// One trial's synchronized streams at a common frame rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiStreamTrial {
    pub id: usize,
    pub user: usize,
    /// Ground-truth technique.
    pub technique: usize,
    pub rate: f64,
    pub states: usize,
    /// `frames×channels` kinematics.
    pub kin: Tensor,
    pub vis: Tensor,
    /// Binary event frames.
    pub evt: Tensor,
    pub labels: Vec<usize>,
}

impl MultiStreamTrial {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks equal stream lengths, label range and binary events.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::data(format!("trial {} has no frames", self.id)));
        }
        for (name, s) in [("kin", &self.kin), ("vis", &self.vis), ("evt", &self.evt)] {
            if s.rows() != n {
                return Err(Error::data(format!("trial {}: {name} has {} frames, labels {n}", self.id, s.rows())));
            }
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.states) {
            return Err(Error::data(format!("trial {}: label {l} outside [0, {})", self.id, self.states)));
        }
        if self.evt.data().iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::data(format!("trial {}: events must be 0 or 1", self.id)));
        }
        if !(self.kin.is_finite() && self.vis.is_finite()) {
            return Err(Error::data(format!("trial {}: non-finite stream value", self.id)));
        }
        Ok(())
    }

    /// Kinematics as a clustering input.
    pub fn kinematics_series(&self) -> TrialSeries<f64> {
        TrialSeries::new(self.id, self.kin.cols(), self.kin.data().to_vec()).expect("kinematics are non-empty")
    }

    /// Maximal runs of constant state as `(state, start, end_exclusive)`.
    pub fn state_runs(&self) -> Vec<(usize, usize, usize)> {
        let mut runs = Vec::new();
        let mut start = 0;
        for t in 1..=self.labels.len() {
            if t == self.labels.len() || self.labels[t] != self.labels[start] {
                runs.push((self.labels[start], start, t));
                start = t;
            }
        }
        runs
    }
}
