use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::groups::{ADVERSARY_SIDE, ESTIMATOR_SIDE};
use super::loss::{dropout_mask, LossBreakdown};
use super::model::Model;
use super::{TrainSchedule, VariantKind};
use crate::dataset::MultiStreamTrial;
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig};
use crate::{Graph, Tensor};

/// Losses above this magnitude count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryLosses {
    pub f1: f64,
    pub f2: f64,
    pub disc: f64,
    pub total: f64,
}

/// Mean losses of one epoch, per phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub estimator: LossBreakdown,
    pub adversary: Option<AdversaryLosses>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochTrace>,
}

struct CachedCodes {
    e1: Tensor,
    e2: Tensor,
    technique: Option<usize>,
}

fn guard(epoch: usize, what: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Training { epoch, msg: format!("{what} loss {value}") });
    }
    Ok(())
}

fn sample_frames(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if count == 0 || count >= len {
        return (0..len).collect();
    }
    let mut f = index::sample(rng, len, count).into_vec();
    f.sort_unstable();
    f
}

/// Alternating minimax training.
///
/// Each round runs `p1_batches` estimator-phase batches, updating the
/// feature encoders, `E`, `M` and `R` with the adversaries frozen, then
/// `p2_batches` adversary-phase batches updating `f1`, `f2` and `D` with
/// everything else frozen. Adversary batches read the codes recorded by the
/// most recent estimator pass over each trial. The `na` variant runs only
/// estimator-phase batches with the state loss.
///
/// `techniques` gives one technique label per trial and is required by the full variant.
pub fn train_minimax(
    model: &mut Model,
    trials: &[MultiStreamTrial],
    techniques: Option<&[usize]>,
    schedule: &TrainSchedule,
) -> Result<TrainTrace> {
    if trials.is_empty() {
        return Err(Error::data("no training trials"));
    }
    schedule.validate(model.variant)?;
    for t in trials {
        model.check_trial(t)?;
    }
    let full = model.variant == VariantKind::Full;
    let techniques = match techniques {
        Some(l) if l.len() != trials.len() => {
            return Err(Error::data(format!("{} technique labels for {} trials", l.len(), trials.len())));
        }
        Some(l) => {
            if let Some(&bad) = l.iter().find(|&&x| x >= model.config.techniques) {
                if full {
                    return Err(Error::data(format!("technique label {bad} outside [0, {})", model.config.techniques)));
                }
            }
            Some(l)
        }
        None if full => return Err(Error::data("full variant needs technique labels")),
        None => None,
    };
    let technique_of = |i: usize| if full { techniques.map(|l| l[i]) } else { None };

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut p1 = Adam::new(AdamConfig { rate: schedule.learning_rate, ..AdamConfig::default() });
    let mut p2 = Adam::new(AdamConfig { rate: schedule.adversary_learning_rate, ..AdamConfig::default() });
    let mut cache: Vec<Option<CachedCodes>> = (0..trials.len()).map(|_| None).collect();
    let mut cursor = 0usize;
    let mut trace = TrainTrace::default();

    for epoch in 0..schedule.epochs {
        let mut order: Vec<usize> = (0..trials.len()).collect();
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(schedule.batch_size).collect();
        let mut est_sum = LossBreakdown::default();
        let mut adv_sum = AdversaryLosses::default();
        let (mut est_n, mut adv_n) = (0usize, 0usize);

        for round in batches.chunks(schedule.p1_batches) {
            for batch in round {
                let b = estimator_step(model, trials, batch, &technique_of, schedule, &mut rng, &mut p1, &mut cache, epoch)?;
                est_sum.accumulate(&b, 1.0);
                est_n += 1;
            }
            if !model.variant.is_adversarial() {
                continue;
            }
            for _ in 0..schedule.p2_batches {
                let a = adversary_step(model, &cache, &mut cursor, schedule.batch_size, &mut p2, epoch)?;
                adv_sum.f1 += a.f1;
                adv_sum.f2 += a.f2;
                adv_sum.disc += a.disc;
                adv_sum.total += a.total;
                adv_n += 1;
            }
        }
        let mut estimator = LossBreakdown::default();
        estimator.accumulate(&est_sum, 1.0 / est_n as f64);
        let adversary = (adv_n > 0).then(|| {
            let s = 1.0 / adv_n as f64;
            AdversaryLosses { f1: adv_sum.f1 * s, f2: adv_sum.f2 * s, disc: adv_sum.disc * s, total: adv_sum.total * s }
        });
        trace.epochs.push(EpochTrace { epoch, estimator, adversary });
    }
    model.store.set_all_trainable(true);
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn estimator_step(
    model: &mut Model,
    trials: &[MultiStreamTrial],
    batch: &[usize],
    technique_of: &dyn Fn(usize) -> Option<usize>,
    schedule: &TrainSchedule,
    rng: &mut ChaCha8Rng,
    opt: &mut Adam<f64>,
    cache: &mut [Option<CachedCodes>],
    epoch: usize,
) -> Result<LossBreakdown> {
    model.store.train_only(&ESTIMATOR_SIDE);
    let mut sum = LossBreakdown::default();
    let scale = 1.0 / batch.len() as f64;
    let grads = {
        let mut g = Graph::new(&model.store);
        let mut objectives = Vec::with_capacity(batch.len());
        for &i in batch {
            let trial = &trials[i];
            let frames = sample_frames(trial.len(), schedule.frames_per_trial, rng);
            let labels: Vec<usize> = frames.iter().map(|&t| trial.labels[t]).collect();
            let fw = model.forward(&mut g, trial, &frames)?;
            let mask = if model.variant.is_adversarial() && model.weights.beta > 0.0 {
                Some(dropout_mask(frames.len(), model.config.latent, model.weights.dropout, rng)?)
            } else {
                None
            };
            let nodes = model.loss_nodes(&mut g, &fw, &labels, technique_of(i), mask.as_ref())?;
            let (obj, b) = model.estimator_objective(&mut g, &nodes)?;
            guard(epoch, "estimator", b.total)?;
            sum.accumulate(&b, scale);
            objectives.push((scale, obj));
            if let (Some(e1), Some(e2)) = (fw.e1_at, fw.e2_at) {
                cache[i] = Some(CachedCodes {
                    e1: g.value(e1).clone(),
                    e2: g.value(e2).clone(),
                    technique: technique_of(i),
                });
            }
        }
        let total = g.weighted_sum(&objectives)?;
        g.backward(total)?
    };
    apply(model, opt, grads, schedule.clip_norm, epoch)?;
    Ok(sum)
}

fn adversary_step(
    model: &mut Model,
    cache: &[Option<CachedCodes>],
    cursor: &mut usize,
    batch_size: usize,
    opt: &mut Adam<f64>,
    epoch: usize,
) -> Result<AdversaryLosses> {
    model.store.train_only(&ADVERSARY_SIDE);
    let available: Vec<usize> = (0..cache.len()).filter(|&i| cache[i].is_some()).collect();
    let picks: Vec<usize> = (0..batch_size.min(available.len()))
        .map(|_| {
            let i = available[*cursor % available.len()];
            *cursor += 1;
            i
        })
        .collect();
    let scale = 1.0 / picks.len() as f64;
    let mut out = AdversaryLosses::default();
    let grads = {
        let mut g = Graph::new(&model.store);
        let mut terms = Vec::with_capacity(picks.len());
        for &i in &picks {
            let c = cache[i].as_ref().expect("picked from available");
            let e1 = g.constant(c.e1.clone());
            let e2 = g.constant(c.e2.clone());
            let (f1, f2, disc) = model.adversary_nodes(&mut g, e1, e2, c.technique)?;
            let obj = model.adversary_objective(&mut g, f1, f2, disc)?;
            out.f1 += scale * g.value(f1).item();
            out.f2 += scale * g.value(f2).item();
            out.disc += scale * disc.map_or(0.0, |d| g.value(d).item());
            out.total += scale * g.value(obj).item();
            terms.push((scale, obj));
        }
        guard(epoch, "adversary", out.total)?;
        let total = g.weighted_sum(&terms)?;
        g.backward(total)?
    };
    apply(model, opt, grads, 0.0, epoch)?;
    Ok(out)
}

fn apply(model: &mut Model, opt: &mut Adam<f64>, mut grads: crate::Gradients, clip: f64, epoch: usize) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Training { epoch, msg: "non-finite gradient".into() });
    }
    if clip > 0.0 {
        grads.clip_global_norm(clip);
    }
    opt.step(&mut model.store, &grads)
}
