use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{MultiStreamTrial, WindowMode};
use crate::error::Result;
use crate::invariance::groups::*;
use crate::invariance::{dropout_mask, LossWeights, Model, ModelConfig, VariantKind};
use crate::numerics::{grad_check, NodeId};
use crate::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSuiteReport {
    pub tolerance: f64,
    pub entries: Vec<GradientEntry>,
}

impl GradientSuiteReport {
    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

fn tiny(mode: WindowMode, seed: u64) -> ModelConfig {
    ModelConfig {
        vis_channels: 2,
        kin_channels: 3,
        evt_channels: 2,
        states: 3,
        techniques: 2,
        vis_hidden: 2,
        kin_hidden: 2,
        evt_hidden: 2,
        attention_dim: 2,
        latent: 2,
        estimator_hidden: 2,
        t_obs: 3,
        mode,
        seed,
    }
}

fn random_trial(rng: &mut ChaCha8Rng, id: usize, len: usize) -> MultiStreamTrial {
    let vis = random_matrix(rng, len, 2);
    let kin = random_matrix(rng, len, 3);
    let evt = Tensor::matrix(len, 2, (0..2 * len).map(|i| f64::from(u8::from(i % 3 == 0))).collect()).expect("shape");
    let labels = (0..len).map(|t| t * 3 / len).collect();
    MultiStreamTrial { id, user: 0, technique: id % 2, rate: 10.0, states: 3, kin, vis, evt, labels }
}

fn composite(m: &Model, g: &mut Graph<'_>, trials: &[MultiStreamTrial]) -> Result<NodeId> {
    let mut terms = Vec::new();
    for (i, t) in trials.iter().enumerate() {
        let frames: Vec<usize> = (0..t.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mask = dropout_mask(frames.len(), m.config.latent, m.weights.dropout, &mut rng)?;
        let fw = m.forward(g, t, &frames)?;
        let n = m.loss_nodes(g, &fw, &t.labels, Some(t.technique), Some(&mask))?;
        terms.push((1.0 / trials.len() as f64, m.loss_full(g, &n)?.0));
    }
    g.weighted_sum(&terms)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Finite-difference checks of every layer type and of the full composite
/// loss in both window modes, on models whose tensors have extents of at most 8.
///
/// The reconstruction target is detached, so the composite check runs once
/// with the reconstruction term off (covering the feature encoders) and once
/// with it on and the feature encoders frozen.
pub fn gradient_suite(seed: u64, tolerance: f64) -> Result<GradientSuiteReport> {
    let mut entries = Vec::new();
    let mut record = |name: &str, report: crate::numerics::GradCheckReport| {
        entries.push(GradientEntry { name: name.into(), max_rel_error: report.max_rel_error(), passed: report.passed() });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = vec![random_trial(&mut rng, 0, 5), random_trial(&mut rng, 1, 4)];
    let base = Model::new(tiny(WindowMode::Causal, seed), VariantKind::Full, LossWeights::default())?;

    let layer = |groups: &[&str]| {
        let mut m = base.clone();
        m.store.train_only(groups);
        m
    };

    let m = layer(&[FEATURES]);
    record(
        "stream encoders",
        grad_check(
            &m.store,
            |g| {
                let h = m.features(g, &trials[0])?;
                let sq = g.mul(h, h)?;
                Ok(g.sum(sq))
            },
            tolerance,
        )?,
    );

    let h_in = random_matrix(&mut rng, 4, base.config.feature_size());
    let m = layer(&[ENCODER]);
    record(
        "encoder split",
        grad_check(
            &m.store,
            |g| {
                let h = g.constant(h_in.clone());
                let (e1, e2) = m.encode_split(g, h)?;
                let a = g.mul(e1, e1)?;
                let b = g.mul(e2, e1)?;
                let s = g.add(a, b)?;
                Ok(g.sum(s))
            },
            tolerance,
        )?,
    );

    let codes = random_matrix(&mut rng, 6, base.config.latent);
    let other = random_matrix(&mut rng, 6, base.config.latent);
    for mode in [WindowMode::Causal, WindowMode::Noncausal] {
        let mut m = Model::new(tiny(mode, seed), VariantKind::Full, LossWeights::default())?;
        m.store.train_only(&[ESTIMATOR]);
        record(
            &format!("state estimator ({mode})"),
            grad_check(
                &m.store,
                |g| {
                    let src = g.constant(codes.clone());
                    let p = m.estimate_state(g, src, &[0, 2, 5])?;
                    g.cross_entropy(p, &[0, 1, 2])
                },
                tolerance,
            )?,
        );
    }

    let m = layer(&[RECONSTRUCTOR]);
    record(
        "reconstructor",
        grad_check(
            &m.store,
            |g| {
                let (e1, e2) = (g.constant(codes.clone()), g.constant(other.clone()));
                let r = m.reconstruct(g, e1, e2)?;
                let target = g.constant(Tensor::filled(&[6, m.config.feature_size()], 0.3));
                g.mse(r, target)
            },
            tolerance,
        )?,
    );

    let m = layer(&[F1, F2, DISCRIMINATOR]);
    record(
        "disentanglers and discriminator",
        grad_check(
            &m.store,
            |g| {
                let (e1, e2) = (g.constant(codes.clone()), g.constant(other.clone()));
                let (f1, f2, d) = m.adversary_nodes(g, e1, e2, Some(1))?;
                m.adversary_objective(g, f1, f2, d)
            },
            tolerance,
        )?,
    );

    for mode in [WindowMode::Causal, WindowMode::Noncausal] {
        let no_recon = LossWeights { beta: 0.0, ..LossWeights::default() };
        let m = Model::new(tiny(mode, seed), VariantKind::Full, no_recon)?;
        record(
            &format!("full composite loss without reconstruction ({mode})"),
            grad_check(&m.store, |g| composite(&m, g, &trials), tolerance)?,
        );
        let mut m = Model::new(tiny(mode, seed), VariantKind::Full, LossWeights::default())?;
        m.store.train_only(&[ENCODER, ESTIMATOR, RECONSTRUCTOR, F1, F2, DISCRIMINATOR]);
        record(&format!("full composite loss ({mode})"), grad_check(&m.store, |g| composite(&m, g, &trials), tolerance)?);
    }
    Ok(GradientSuiteReport { tolerance, entries })
}
