use serde::{Deserialize, Serialize};

use super::{MultiStreamTrial, FRAME_RATE};
use crate::error::{Error, Result};
use crate::Tensor;

/// Default observation window: 2 s at 10 Hz.
pub const DEFAULT_T_OBS: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    #[default]
    Causal,
    Noncausal,
}

impl std::str::FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Self::Causal),
            "noncausal" => Ok(Self::Noncausal),
            _ => Err(Error::config(format!("unknown mode {s:?}; expected causal or noncausal"))),
        }
    }
}

impl std::fmt::Display for WindowMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Causal => "causal",
            Self::Noncausal => "noncausal",
        })
    }
}

/// Resamples a trial recorded at a constant `source_rate` to 10 Hz.
pub fn resample(trial: &MultiStreamTrial, source_rate: f64) -> Result<MultiStreamTrial> {
    if !(source_rate > 0.0 && source_rate.is_finite()) {
        return Err(Error::config(format!("source rate {source_rate} must be positive")));
    }
    let stamps: Vec<f64> = (0..trial.len()).map(|i| i as f64 / source_rate).collect();
    resample_timed(trial, &stamps)
}

/// Resamples frames taken at `stamps` (seconds, strictly increasing) onto a 10 Hz
/// grid starting at the first stamp: linear interpolation for continuous
/// streams, nearest frame (earlier on ties) for events and labels.
pub fn resample_timed(trial: &MultiStreamTrial, stamps: &[f64]) -> Result<MultiStreamTrial> {
    let n = trial.len();
    if n == 0 {
        return Err(Error::data(format!("trial {} has no frames", trial.id)));
    }
    if stamps.len() != n {
        return Err(Error::dim(format!("{} timestamps for {n} frames", stamps.len())));
    }
    if let Some(i) = (1..n).find(|&i| !(stamps[i] > stamps[i - 1])) {
        return Err(Error::data(format!("trial {}: timestamps not increasing at frame {i}", trial.id)));
    }
    if stamps.iter().any(|s| !s.is_finite()) {
        return Err(Error::data(format!("trial {}: non-finite timestamp", trial.id)));
    }
    let origin = stamps[0];
    let span = stamps[n - 1] - origin;
    let out = (span * FRAME_RATE + 1e-9).floor() as usize + 1;

    // For each output frame: bracketing source index and interpolation weight.
    let mut brackets = Vec::with_capacity(out);
    for k in 0..out {
        let tau = origin + k as f64 / FRAME_RATE;
        let hi = stamps.partition_point(|&s| s <= tau).clamp(1, n);
        let lo = hi - 1;
        if lo + 1 >= n || stamps[lo] == tau {
            brackets.push((lo, lo, 0.0));
        } else {
            let w = (tau - stamps[lo]) / (stamps[lo + 1] - stamps[lo]);
            brackets.push((lo, lo + 1, w));
        }
    }
    let linear = |m: &Tensor| -> Result<Tensor> {
        let c = m.cols();
        let mut data = Vec::with_capacity(out * c);
        for &(a, b, w) in &brackets {
            let (ra, rb) = (m.row(a), m.row(b));
            data.extend((0..c).map(|j| if w == 0.0 { ra[j] } else { ra[j] + w * (rb[j] - ra[j]) }));
        }
        Tensor::matrix(out, c, data)
    };
    let nearest: Vec<usize> = brackets.iter().map(|&(a, b, w)| if w > 0.5 { b } else { a }).collect();
    let hold = |m: &Tensor| -> Result<Tensor> {
        let c = m.cols();
        let data = nearest.iter().flat_map(|&i| m.row(i).iter().copied()).collect();
        Tensor::matrix(out, c, data)
    };
    Ok(MultiStreamTrial {
        id: trial.id,
        user: trial.user,
        technique: trial.technique,
        rate: FRAME_RATE,
        states: trial.states,
        kin: linear(&trial.kin)?,
        vis: linear(&trial.vis)?,
        evt: hold(&trial.evt)?,
        labels: nearest.iter().map(|&i| trial.labels[i]).collect(),
    })
}

/// Frame indices of the window around `t` in a trial of `len` frames, clamped
/// to the trial so early (and, non-causally, late) windows repeat edge frames.
///
/// Causal windows cover `[t - t_obs + 1, t]`; non-causal windows cover
/// `[t - t_obs/2, t + t_obs - t_obs/2 - 1]`.
pub fn window_indices(len: usize, t: usize, t_obs: usize, mode: WindowMode) -> Vec<usize> {
    let back = match mode {
        WindowMode::Causal => t_obs - 1,
        WindowMode::Noncausal => t_obs / 2,
    };
    (0..t_obs).map(|k| (t + k).saturating_sub(back).min(len - 1)).collect()
}

/// One labeled observation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub trial_id: usize,
    pub t: usize,
    pub mode: WindowMode,
    /// Frame indices making up the window, oldest first.
    pub frames: Vec<usize>,
    pub label: usize,
    /// Assigned technique label, when known.
    pub technique: Option<usize>,
}

/// One sample per frame of `trial`.
pub fn window(
    trial: &MultiStreamTrial,
    t_obs: usize,
    mode: WindowMode,
    technique: Option<usize>,
) -> Result<Vec<WindowedSample>> {
    if t_obs == 0 {
        return Err(Error::config("observation window must be at least one frame"));
    }
    if trial.is_empty() {
        return Err(Error::data(format!("trial {} has no frames", trial.id)));
    }
    Ok((0..trial.len())
        .map(|t| WindowedSample {
            trial_id: trial.id,
            t,
            mode,
            frames: window_indices(trial.len(), t, t_obs, mode),
            label: trial.labels[t],
            technique,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_from_config, GeneratorConfig};

    fn sample_trial() -> MultiStreamTrial {
        let cfg = GeneratorConfig { trials: 1, users: 1, duration_range: (0.5, 1.5), ..Default::default() };
        generate_from_config(&cfg).unwrap().remove(0)
    }

    fn ramp(n: usize, rate: f64) -> MultiStreamTrial {
        let col = |f: &dyn Fn(f64) -> f64| (0..n).map(|i| f(i as f64 / rate)).collect::<Vec<_>>();
        MultiStreamTrial {
            id: 0,
            user: 0,
            technique: 0,
            rate,
            states: 3,
            kin: Tensor::matrix(n, 1, col(&|t| 2.5 * t - 1.0)).unwrap(),
            vis: Tensor::matrix(n, 1, col(&|t| -0.75 * t + 3.0)).unwrap(),
            evt: Tensor::matrix(n, 1, (0..n).map(|i| (i % 2) as f64).collect()).unwrap(),
            labels: (0..n).map(|i| i * 3 / n).collect(),
        }
    }

    #[test]
    fn ten_hertz_is_identity() {
        let t = sample_trial();
        assert_eq!(resample(&t, 10.0).unwrap(), t);
    }

    #[test]
    fn twenty_hertz_keeps_every_other_sample() {
        let src = ramp(41, 20.0);
        let out = resample(&src, 20.0).unwrap();
        assert!(out.len().abs_diff(src.len() / 2) <= 1);
        for k in 0..out.len() {
            assert_eq!(out.kin.row(k)[0], src.kin.row(2 * k)[0]);
            assert_eq!(out.labels[k], src.labels[2 * k]);
        }
    }

    #[test]
    fn seven_hertz_ramp_is_interpolated_exactly() {
        let src = ramp(50, 7.0);
        let out = resample(&src, 7.0).unwrap();
        assert_eq!(out.rate, 10.0);
        for k in 0..out.len() {
            let tau = k as f64 / 10.0;
            assert!((out.kin.row(k)[0] - (2.5 * tau - 1.0)).abs() < 1e-9);
            assert!((out.vis.row(k)[0] - (-0.75 * tau + 3.0)).abs() < 1e-9);
            assert!(out.evt.row(k)[0] == 0.0 || out.evt.row(k)[0] == 1.0);
        }
    }

    #[test]
    fn non_monotone_stamps_are_a_data_error() {
        let src = ramp(4, 10.0);
        assert!(matches!(resample_timed(&src, &[0.0, 0.2, 0.1, 0.3]), Err(Error::Data(_))));
        assert!(matches!(resample(&src, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn one_sample_per_frame_in_both_modes() {
        let t = sample_trial();
        for mode in [WindowMode::Causal, WindowMode::Noncausal] {
            let w = window(&t, DEFAULT_T_OBS, mode, None).unwrap();
            assert_eq!(w.len(), t.len());
            assert!(w.iter().all(|s| s.frames.len() == DEFAULT_T_OBS));
        }
    }

    #[test]
    fn first_causal_window_repeats_first_frame() {
        let t = sample_trial();
        let w = window(&t, DEFAULT_T_OBS, WindowMode::Causal, None).unwrap();
        assert_eq!(w[0].frames, vec![0; DEFAULT_T_OBS]);
    }

    #[test]
    fn interior_windows_are_raw_slices() {
        let len = 100;
        assert_eq!(window_indices(len, 50, 20, WindowMode::Causal), (31..=50).collect::<Vec<_>>());
        assert_eq!(window_indices(len, 50, 20, WindowMode::Noncausal), (40..60).collect::<Vec<_>>());
        assert_eq!(*window_indices(len, 99, 20, WindowMode::Noncausal).last().unwrap(), 99);
    }

    #[test]
    fn causal_windows_never_look_ahead() {
        for t in 0..30 {
            assert!(window_indices(30, t, 7, WindowMode::Causal).iter().all(|&i| i <= t));
        }
    }

    #[test]
    fn zero_window_is_rejected() {
        assert!(matches!(window(&sample_trial(), 0, WindowMode::Causal, None), Err(Error::Config(_))));
    }
}
