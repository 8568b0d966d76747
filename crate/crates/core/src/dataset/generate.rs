use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{GeneratorConfig, MultiStreamTrial, NuisanceSpec, TaskFsm, TechniqueSpec, FRAME_RATE};
use crate::error::{Error, Result};
use crate::Tensor;

/// Stream reserved for task structure; trial `i` uses stream `i + 1`, users `u` use `1 << 32 | u`.
const STRUCTURE_STREAM: u64 = 0;
const USER_STREAM_BASE: u64 = 1 << 32;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn transitions_for(route: &[usize], fidelity: f64) -> Vec<Vec<f64>> {
    let s = route.len();
    let mut m = vec![vec![0.0; s]; s];
    for (i, &from) in route.iter().enumerate() {
        let next = route[(i + 1) % s];
        let others = s - 2;
        for to in 0..s {
            m[from][to] = if to == next {
                if others == 0 { 1.0 } else { fidelity }
            } else if to == from || others == 0 {
                0.0
            } else {
                (1.0 - fidelity) / others as f64
            };
        }
    }
    m
}

/// Builds the task and technique blueprints deterministically from `cfg.seed`.
pub fn build_task(cfg: &GeneratorConfig) -> Result<(TaskFsm, Vec<TechniqueSpec>)> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, STRUCTURE_STREAM);
    let s = cfg.states;
    let (lo, hi) = cfg.duration_range;
    let mut mean_durations: Vec<f64> =
        (0..s).map(|i| lo + (hi - lo) * i as f64 / (s - 1) as f64).collect();
    mean_durations.shuffle(&mut rng);

    let mut matrix = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
        (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    let kin_templates = matrix(s, cfg.kin_channels);
    let vis_templates = matrix(s, cfg.vis_channels);
    let evt_templates: Vec<Vec<u8>> =
        (0..s).map(|i| (0..cfg.evt_channels).map(|c| u8::from((i * 7 + c * 3) % 5 < 2)).collect()).collect();
    let kin_frequencies = (0..cfg.kin_channels).map(|_| rng.random_range(0.2..0.6)).collect();
    let fsm = TaskFsm {
        states: s,
        mean_durations,
        jitter: cfg.duration_jitter,
        kin_templates,
        vis_templates,
        evt_templates,
        kin_frequencies,
        motion_amplitude: cfg.motion_amplitude,
    };

    let mut base: Vec<usize> = (0..s).collect();
    base.shuffle(&mut rng);
    let style_from = cfg.kin_channels - cfg.style_channels;
    let mut techniques = Vec::with_capacity(cfg.techniques);
    for id in 0..cfg.techniques {
        let mut route = base.clone();
        if id > 0 && s >= 3 {
            for _ in 0..cfg.route_swaps {
                let i = rng.random_range(1..s - 1);
                route.swap(i, i + 1);
            }
        }
        let kin = cfg.kin_channels;
        let spread = |rng: &mut ChaCha8Rng, w: f64| -> Vec<f64> {
            (0..kin).map(|_| 1.0 + if w > 0.0 { rng.random_range(-w..w) } else { 0.0 }).collect()
        };
        let speed = spread(&mut rng, cfg.speed_spread);
        let amplitude = spread(&mut rng, cfg.amplitude_spread);
        let phase = (0..kin).map(|_| rng.random_range(0.0..TAU)).collect();
        let style = (0..s)
            .map(|_| {
                (0..kin)
                    .map(|c| if c >= style_from { cfg.style_strength * rng.random_range(-1.0..1.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        techniques.push(TechniqueSpec {
            id,
            transitions: transitions_for(&route, cfg.route_fidelity),
            start: route[0],
            speed,
            amplitude,
            phase,
            style,
        });
    }
    Ok((fsm, techniques))
}

/// Builds the blueprints from `cfg` and generates `cfg.trials` trials.
pub fn generate_from_config(cfg: &GeneratorConfig) -> Result<Vec<MultiStreamTrial>> {
    let (fsm, techniques) = build_task(cfg)?;
    generate(&fsm, &techniques, &cfg.nuisance, cfg.trials, cfg.users, cfg.segments, cfg.seed)
}

/// Generates trials; trial `i` belongs to user `i mod users` and technique
/// `(i / users) mod techniques`, and draws from its own random substream.
pub fn generate(
    fsm: &TaskFsm,
    techniques: &[TechniqueSpec],
    nuisance: &NuisanceSpec,
    n_trials: usize,
    n_users: usize,
    segments: usize,
    seed: u64,
) -> Result<Vec<MultiStreamTrial>> {
    fsm.validate()?;
    nuisance.validate()?;
    if techniques.is_empty() {
        return Err(Error::config("at least one technique is required"));
    }
    for t in techniques {
        t.validate(fsm)?;
    }
    if n_users == 0 || n_trials < n_users {
        return Err(Error::config(format!("need trials ≥ users ≥ 1, got {n_trials} trials and {n_users} users")));
    }
    if segments == 0 {
        return Err(Error::config("trials need at least one segment"));
    }
    let user_offsets: Vec<(Vec<f64>, Vec<f64>)> = (0..n_users)
        .map(|u| {
            let mut rng = rng_for(seed, USER_STREAM_BASE | u as u64);
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| nuisance.user_offset * rng.random_range(-1.0..1.0)).collect()
            };
            (draw(fsm.kin_channels()), draw(fsm.vis_channels()))
        })
        .collect();
    (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let user = i % n_users;
            let technique = &techniques[(i / n_users) % techniques.len()];
            let mut rng = rng_for(seed, i as u64 + 1);
            trial(fsm, technique, nuisance, &user_offsets[user], segments, i, user, &mut rng)
        })
        .collect()
}

fn state_walk(fsm: &TaskFsm, tech: &TechniqueSpec, segments: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels = Vec::new();
    let mut state = tech.start;
    for seg in 0..segments {
        if seg > 0 {
            let row = &tech.transitions[state];
            let mut r = rng.random::<f64>();
            let mut next = row.iter().rposition(|&p| p > 0.0).unwrap_or(state);
            for (to, &p) in row.iter().enumerate() {
                if r < p {
                    next = to;
                    break;
                }
                r -= p;
            }
            state = next;
        }
        let jitter = if fsm.jitter > 0.0 { rng.random_range(-fsm.jitter..fsm.jitter) } else { 0.0 };
        let seconds = fsm.mean_durations[state] * (1.0 + jitter);
        let frames = ((seconds * FRAME_RATE).round() as usize).max(1);
        labels.extend(std::iter::repeat_n(state, frames));
    }
    if labels.len() < 2 {
        labels.push(state);
    }
    labels
}

#[allow(clippy::too_many_arguments)]
fn trial(
    fsm: &TaskFsm,
    tech: &TechniqueSpec,
    nz: &NuisanceSpec,
    user_offset: &(Vec<f64>, Vec<f64>),
    segments: usize,
    id: usize,
    user: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MultiStreamTrial> {
    let labels = state_walk(fsm, tech, segments, rng);
    let n = labels.len();
    let (kc, vc, ec) = (fsm.kin_channels(), fsm.vis_channels(), fsm.evt_channels());

    let mut uniform = |w: f64| if w > 0.0 { rng.random_range(-w..w) } else { 0.0 };
    let kin_offset: Vec<f64> = (0..kc).map(|c| uniform(nz.offset) + user_offset.0[c]).collect();
    let vis_offset: Vec<f64> = (0..vc).map(|c| uniform(nz.offset) + user_offset.1[c]).collect();
    let drift: Vec<f64> = (0..kc).map(|_| uniform(nz.drift)).collect();
    let gain = |rng: &mut ChaCha8Rng| {
        if nz.gain.1 > nz.gain.0 { rng.random_range(nz.gain.0..nz.gain.1) } else { nz.gain.0 }
    };
    let kin_gain: Vec<f64> = (0..kc).map(|_| gain(rng)).collect();
    let vis_gain: Vec<f64> = (0..vc).map(|_| gain(rng)).collect();
    let kin_noise = Normal::new(0.0, nz.noise).map_err(|e| Error::config(e.to_string()))?;
    let vis_noise = Normal::new(0.0, nz.vis_noise).map_err(|e| Error::config(e.to_string()))?;

    let mut kin = Vec::with_capacity(n * kc);
    let mut vis = Vec::with_capacity(n * vc);
    let mut evt = Vec::with_capacity(n * ec);
    for (t, &s) in labels.iter().enumerate() {
        let tau = t as f64 / FRAME_RATE;
        let progress = t as f64 / n as f64;
        for c in 0..kc {
            let motion = tech.amplitude[c]
                * fsm.motion_amplitude
                * (TAU * fsm.kin_frequencies[c] * tech.speed[c] * tau + tech.phase[c]).sin();
            let clean = fsm.kin_templates[s][c] + motion + tech.style[s][c];
            kin.push(kin_gain[c] * clean + kin_offset[c] + drift[c] * progress + kin_noise.sample(rng));
        }
        for c in 0..vc {
            vis.push(vis_gain[c] * fsm.vis_templates[s][c] + vis_offset[c] + vis_noise.sample(rng));
        }
        for c in 0..ec {
            let on = fsm.evt_templates[s][c] == 1 && !(nz.evt_dropout > 0.0 && rng.random::<f64>() < nz.evt_dropout);
            evt.push(if on { 1.0 } else { 0.0 });
        }
    }
    let trial = MultiStreamTrial {
        id,
        user,
        technique: tech.id,
        rate: FRAME_RATE,
        states: fsm.states,
        kin: Tensor::matrix(n, kc, kin)?,
        vis: Tensor::matrix(n, vc, vis)?,
        evt: Tensor::matrix(n, ec, evt)?,
        labels,
    };
    trial.validate()?;
    Ok(trial)
}
