use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::groups::*;
use super::*;
use crate::dataset::{MultiStreamTrial, WindowMode};
use crate::numerics::{grad_check, NodeId};
use crate::{Graph, Tensor};

fn tiny_config(mode: WindowMode) -> ModelConfig {
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
        seed: 4,
    }
}

fn small_config(mode: WindowMode) -> ModelConfig {
    ModelConfig {
        vis_hidden: 4,
        kin_hidden: 4,
        evt_hidden: 3,
        attention_dim: 3,
        latent: 3,
        estimator_hidden: 4,
        t_obs: 5,
        ..tiny_config(mode)
    }
}

fn random_trial(rng: &mut ChaCha8Rng, id: usize, cfg: &ModelConfig, len: usize) -> MultiStreamTrial {
    let mut m = |cols: usize| Tensor::matrix(len, cols, (0..len * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let vis = m(cfg.vis_channels);
    let kin = m(cfg.kin_channels);
    let evt = Tensor::matrix(len, cfg.evt_channels, (0..len * cfg.evt_channels).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
    let labels = (0..len).map(|t| (t * cfg.states / len).min(cfg.states - 1)).collect();
    MultiStreamTrial { id, user: 0, technique: id % cfg.techniques, rate: 10.0, states: cfg.states, kin, vis, evt, labels }
}

fn model(cfg: ModelConfig, kind: VariantKind) -> Model {
    Model::new(cfg, kind, LossWeights::default()).unwrap()
}

fn zero_group(m: &mut Model, name: &str) {
    let gi = m.store.group_index(name).unwrap();
    let g = m.store.group_mut(gi);
    for i in 0..g.len() {
        g.tensor_mut(i).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
}

fn snapshot(m: &Model, name: &str) -> Vec<Tensor> {
    let gi = m.store.group_index(name).unwrap();
    m.store.group(gi).tensors().to_vec()
}

fn dense_apply(m: &Model, d: &Dense, x: &[f64]) -> Vec<f64> {
    let w = m.store.get(d.w);
    let b = m.store.get(d.b);
    (0..d.output).map(|j| b.data()[j] + (0..d.input).map(|i| x[i] * w.data()[i * d.output + j]).sum::<f64>()).collect()
}

#[test]
fn variants_hold_only_their_groups() {
    let cfg = tiny_config(WindowMode::Causal);
    assert_eq!(model(cfg.clone(), VariantKind::Na).group_names(), vec![FEATURES, ESTIMATOR]);
    assert_eq!(model(cfg.clone(), VariantKind::No).group_names(), vec![FEATURES, ENCODER, ESTIMATOR, RECONSTRUCTOR, F1, F2]);
    assert_eq!(
        model(cfg, VariantKind::Full).group_names(),
        vec![FEATURES, ENCODER, ESTIMATOR, RECONSTRUCTOR, F1, F2, DISCRIMINATOR]
    );
}

#[test]
fn variant_parse_and_weights() {
    assert_eq!("full".parse::<VariantKind>().unwrap(), VariantKind::Full);
    assert!(matches!("both".parse::<VariantKind>(), Err(crate::Error::Config(_))));
    let na = LossWeights::default().for_variant(VariantKind::Na);
    assert_eq!((na.beta, na.gamma, na.delta), (0.0, 0.0, 0.0));
    assert_eq!(LossWeights::default().for_variant(VariantKind::No).delta, 0.0);
    let mut one = tiny_config(WindowMode::Causal);
    one.techniques = 1;
    assert!(Model::new(one.clone(), VariantKind::Full, LossWeights::default()).is_err());
    assert!(Model::new(one, VariantKind::No, LossWeights::default()).is_ok());
}

#[test]
fn missing_parts_are_variant_errors() {
    let cfg = tiny_config(WindowMode::Causal);
    let na = model(cfg.clone(), VariantKind::Na);
    let no = model(cfg.clone(), VariantKind::No);
    let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(0), 0, &cfg, 6);
    let mut g = Graph::new(&na.store);
    let x = g.constant(Tensor::zeros(&[1, 6]));
    assert!(matches!(na.encode_split(&mut g, x), Err(crate::Error::Variant(_))));
    assert!(matches!(na.codes(&trial), Err(crate::Error::Variant(_))));
    let mut g = Graph::new(&no.store);
    let e = g.constant(Tensor::zeros(&[1, 2]));
    assert!(matches!(no.discriminate(&mut g, e), Err(crate::Error::Variant(_))));
    let fw = no.forward(&mut g, &trial, &[0, 1]).unwrap();
    let nodes = no.loss_nodes(&mut g, &fw, &trial.labels[..2], None, None).unwrap();
    assert!(nodes.disc.is_none());
    assert!(matches!(no.loss_full(&mut g, &nodes), Err(crate::Error::Variant(_))));
}

#[test]
fn zero_encoder_weights_give_zero_codes() {
    let cfg = tiny_config(WindowMode::Causal);
    let mut m = model(cfg.clone(), VariantKind::No);
    zero_group(&mut m, ENCODER);
    let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(1), 0, &cfg, 7);
    let (e1, e2) = m.codes(&trial).unwrap();
    assert!(e1.data().iter().chain(e2.data()).all(|&x| x == 0.0));
}

#[test]
fn codes_match_affine_tanh_oracle() {
    let cfg = tiny_config(WindowMode::Causal);
    let m = model(cfg.clone(), VariantKind::Full);
    let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(2), 0, &cfg, 6);
    let h = m.feature_values(&trial).unwrap();
    let (e1, e2) = m.codes(&trial).unwrap();
    for (code, dense) in [(&e1, m.parts.e1.as_ref().unwrap()), (&e2, m.parts.e2.as_ref().unwrap())] {
        for t in 0..trial.len() {
            let want: Vec<f64> = dense_apply(&m, dense, h.row(t)).into_iter().map(f64::tanh).collect();
            for (a, b) in code.row(t).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_reconstructor_weights_return_bias() {
    let cfg = tiny_config(WindowMode::Causal);
    let mut m = model(cfg, VariantKind::No);
    let r = m.parts.reconstructor.clone().unwrap();
    m.store.get_mut(r.w).data_mut().iter_mut().for_each(|x| *x = 0.0);
    let bias: Vec<f64> = (0..r.output).map(|i| 0.1 * i as f64 - 0.2).collect();
    m.store.get_mut(r.b).data_mut().copy_from_slice(&bias);
    let mut g = Graph::new(&m.store);
    let e = g.constant(Tensor::matrix(2, 2, vec![0.3, -0.7, 0.9, 0.1]).unwrap());
    let out = m.reconstruct(&mut g, e, e).unwrap();
    for r in 0..2 {
        assert_eq!(g.value(out).row(r), bias.as_slice());
    }
}

#[test]
fn state_and_technique_probabilities_sum_to_one() {
    for mode in [WindowMode::Causal, WindowMode::Noncausal] {
        let cfg = small_config(mode);
        let m = model(cfg.clone(), VariantKind::Full);
        let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(3), 0, &cfg, 9);
        let p = m.predict_proba(&trial).unwrap();
        assert_eq!(p.shape(), &[9, cfg.states]);
        let (e1, _) = m.codes(&trial).unwrap();
        let mut g = Graph::new(&m.store);
        let e = g.constant(e1);
        let d = m.discriminate(&mut g, e).unwrap();
        for probs in [&p, g.value(d)] {
            for r in 0..probs.rows() {
                let s: f64 = probs.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(probs.row(r).iter().all(|&x| x > 0.0));
            }
        }
    }
}

#[test]
fn untrained_discriminator_is_near_chance() {
    let mut cfg = small_config(WindowMode::Causal);
    cfg.techniques = 3;
    let m = model(cfg.clone(), VariantKind::Full);
    let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(5), 0, &cfg, 30);
    let (e1, _) = m.codes(&trial).unwrap();
    let mut g = Graph::new(&m.store);
    let e = g.constant(e1);
    let d = m.discriminate(&mut g, e).unwrap();
    let mean: Vec<f64> = (0..3).map(|k| (0..30).map(|r| g.value(d).row(r)[k]).sum::<f64>() / 30.0).collect();
    assert!(mean.iter().all(|&p| (p - 1.0 / 3.0).abs() < 0.2), "{mean:?}");
}

#[test]
fn causal_estimates_ignore_future_frames() {
    let cfg = small_config(WindowMode::Causal);
    let m = model(cfg.clone(), VariantKind::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_trial(&mut rng, 0, &cfg, 12);
    let mut b = a.clone();
    for t in 8..12 {
        for c in 0..cfg.kin_channels {
            b.kin.data_mut()[t * cfg.kin_channels + c] += 5.0;
        }
        b.vis.data_mut()[t * cfg.vis_channels] -= 3.0;
    }
    let (pa, pb) = (m.predict_proba(&a).unwrap(), m.predict_proba(&b).unwrap());
    for t in 0..8 {
        assert_eq!(pa.row(t), pb.row(t));
    }
    assert_ne!(pa.row(8), pb.row(8));

    let nc = model(small_config(WindowMode::Noncausal), VariantKind::Full);
    let (qa, qb) = (nc.predict_proba(&a).unwrap(), nc.predict_proba(&b).unwrap());
    assert_ne!(qa.row(7), qb.row(7));
}

#[test]
fn dropout_mask_rate_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = dropout_mask(100, 100, 0.4, &mut rng).unwrap();
    assert!(m.data().iter().all(|&x| x == 0.0 || x == 1.0));
    let dropped = m.data().iter().filter(|&&x| x == 0.0).count() as f64 / 1e4;
    assert!((0.37..=0.43).contains(&dropped), "{dropped}");
    assert!(dropout_mask(2, 2, 0.0, &mut rng).unwrap().data().iter().all(|&x| x == 1.0));
    assert!(matches!(dropout_mask(2, 2, 1.0, &mut rng), Err(crate::Error::Config(_))));
    assert!(dropout_mask(2, 2, -0.1, &mut rng).is_err());
}

fn ce(probs: &Tensor, labels: &[usize]) -> f64 {
    labels.iter().enumerate().map(|(r, &l)| -probs.row(r)[l].ln()).sum::<f64>() / labels.len() as f64
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[test]
fn loss_terms_match_hand_computation() {
    let cfg = small_config(WindowMode::Causal);
    let weights = LossWeights { alpha: 1.3, beta: 0.7, gamma: 0.2, delta: 0.3, dropout: 0.4 };
    let m = Model::new(cfg.clone(), VariantKind::Full, weights).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let trial = random_trial(&mut rng, 1, &cfg, 10);
    let frames = [0, 3, 4, 9];
    let labels: Vec<usize> = frames.iter().map(|&t| trial.labels[t]).collect();
    let mask = dropout_mask(frames.len(), cfg.latent, 0.4, &mut rng).unwrap();

    let mut g = Graph::new(&m.store);
    let fw = m.forward(&mut g, &trial, &frames).unwrap();
    let n = m.loss_nodes(&mut g, &fw, &labels, Some(1), Some(&mask)).unwrap();
    let (est, b_est) = m.estimator_objective(&mut g, &n).unwrap();
    let (nuis, b_nuis) = m.loss_nuis(&mut g, &n).unwrap();
    let (full, b_full) = m.loss_full(&mut g, &n).unwrap();

    let h = g.value(fw.h_at).clone();
    let e1 = g.value(fw.e1_at.unwrap()).clone();
    let e2 = g.value(fw.e2_at.unwrap()).clone();
    let l_m = ce(g.value(fw.probs), &labels);
    let (mut l_r, mut l_f1, mut l_f2) = (0.0, 0.0, 0.0);
    let mut d_probs = Vec::new();
    for r in 0..frames.len() {
        let corrupted: Vec<f64> = e1.row(r).iter().zip(mask.row(r)).map(|(a, b)| a * b).collect();
        let joined: Vec<f64> = e2.row(r).iter().chain(&corrupted).copied().collect();
        l_r += mse(&dense_apply(&m, m.parts.reconstructor.as_ref().unwrap(), &joined), h.row(r)) / frames.len() as f64;
        l_f1 += mse(&dense_apply(&m, m.parts.f1.as_ref().unwrap(), e1.row(r)), e2.row(r)) / frames.len() as f64;
        l_f2 += mse(&dense_apply(&m, m.parts.f2.as_ref().unwrap(), e2.row(r)), e1.row(r)) / frames.len() as f64;
        let logits = dense_apply(&m, m.parts.discriminator.as_ref().unwrap(), e1.row(r));
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        d_probs.extend(logits.iter().map(|x| x.exp() / z));
    }
    let l_d = ce(&Tensor::matrix(frames.len(), cfg.techniques, d_probs).unwrap(), &[1; 4]);

    let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    for b in [&b_est, &b_nuis, &b_full] {
        close(b.state, l_m);
        close(b.recon, l_r);
        close(b.f1, l_f1);
        close(b.f2, l_f2);
    }
    close(b_full.disc, l_d);
    close(b_nuis.disc, 0.0);
    let w = weights;
    close(g.value(nuis).item(), w.alpha * l_m + w.beta * l_r + w.gamma * (l_f1 + l_f2));
    close(g.value(full).item(), w.alpha * l_m + w.beta * l_r + w.gamma * (l_f1 + l_f2) + w.delta * l_d);
    close(g.value(est).item(), w.alpha * l_m + w.beta * l_r - w.gamma * (l_f1 + l_f2) - w.delta * l_d);
    close(b_est.total, g.value(est).item());
}

#[test]
fn zero_delta_reduces_full_to_nuisance_loss() {
    let cfg = small_config(WindowMode::Causal);
    let weights = LossWeights { delta: 0.0, ..LossWeights::default() };
    let m = Model::new(cfg.clone(), VariantKind::Full, weights).unwrap();
    let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(9), 0, &cfg, 8);
    let mut g = Graph::new(&m.store);
    let fw = m.forward(&mut g, &trial, &[1, 2, 5]).unwrap();
    let labels: Vec<usize> = [1, 2, 5].iter().map(|&t| trial.labels[t]).collect();
    let n = m.loss_nodes(&mut g, &fw, &labels, Some(0), None).unwrap();
    let (a, _) = m.loss_nuis(&mut g, &n).unwrap();
    let (b, _) = m.loss_full(&mut g, &n).unwrap();
    assert_eq!(g.value(a).item(), g.value(b).item());
}

#[test]
fn bad_labels_are_data_errors() {
    let cfg = tiny_config(WindowMode::Causal);
    let m = model(cfg.clone(), VariantKind::Full);
    let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(10), 0, &cfg, 5);
    let mut g = Graph::new(&m.store);
    let fw = m.forward(&mut g, &trial, &[0, 1]).unwrap();
    assert!(matches!(m.loss_nodes(&mut g, &fw, &[0], Some(0), None), Err(crate::Error::Data(_))));
    assert!(matches!(m.loss_nodes(&mut g, &fw, &[0, 0], None, None), Err(crate::Error::Data(_))));
    assert!(matches!(m.loss_nodes(&mut g, &fw, &[0, 0], Some(2), None), Err(crate::Error::Data(_))));
    assert!(matches!(m.loss_nodes(&mut g, &fw, &[0, 9], Some(0), None), Err(crate::Error::Data(_))));
}

#[test]
fn mismatched_trials_are_rejected() {
    let cfg = tiny_config(WindowMode::Causal);
    let m = model(cfg.clone(), VariantKind::No);
    let mut trial = random_trial(&mut ChaCha8Rng::seed_from_u64(11), 0, &cfg, 5);
    trial.states = 4;
    assert!(matches!(m.predict(&trial), Err(crate::Error::Config(_))));
    trial.states = 3;
    trial.kin = Tensor::zeros(&[5, 1]);
    assert!(matches!(m.predict(&trial), Err(crate::Error::Dimension(_))));
}

fn composite_loss(m: &Model, g: &mut Graph<'_>, trials: &[MultiStreamTrial]) -> crate::Result<NodeId> {
    let mut terms = Vec::new();
    for (i, trial) in trials.iter().enumerate() {
        let frames: Vec<usize> = (0..trial.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mask = dropout_mask(frames.len(), m.config.latent, m.weights.dropout, &mut rng)?;
        let fw = m.forward(g, trial, &frames)?;
        let n = m.loss_nodes(g, &fw, &trial.labels, Some(trial.technique), Some(&mask))?;
        let (full, _) = m.loss_full(g, &n)?;
        terms.push((0.5, full));
    }
    g.weighted_sum(&terms)
}

#[test]
fn full_composite_loss_passes_grad_check() {
    for mode in [WindowMode::Causal, WindowMode::Noncausal] {
        let cfg = tiny_config(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trials = vec![random_trial(&mut rng, 0, &cfg, 5), random_trial(&mut rng, 1, &cfg, 4)];
        // The reconstruction target is detached, so feature gradients are
        // checked without that term and every other group with it.
        let no_recon = LossWeights { beta: 0.0, ..LossWeights::default() };
        let m = Model::new(cfg.clone(), VariantKind::Full, no_recon).unwrap();
        let report = grad_check(&m.store, |g| composite_loss(&m, g, &trials), 1e-4).unwrap();
        assert!(report.passed(), "{mode}: {report:?}");

        let mut m = model(cfg.clone(), VariantKind::Full);
        m.store.train_only(&[ENCODER, ESTIMATOR, RECONSTRUCTOR, F1, F2, DISCRIMINATOR]);
        let report = grad_check(&m.store, |g| composite_loss(&m, g, &trials), 1e-4).unwrap();
        assert!(report.passed(), "{mode}: {report:?}");
    }
}

#[test]
fn na_supervised_loss_passes_grad_check() {
    let cfg = tiny_config(WindowMode::Causal);
    let m = model(cfg.clone(), VariantKind::Na);
    let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(13), 0, &cfg, 5);
    let report = grad_check(
        &m.store,
        |g| {
            let fw = m.forward(g, &trial, &[0, 2, 4])?;
            let n = m.loss_nodes(g, &fw, &[trial.labels[0], trial.labels[2], trial.labels[4]], None, None)?;
            Ok(m.estimator_objective(g, &n)?.0)
        },
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

fn data(seed: u64, cfg: &ModelConfig, n: usize) -> Vec<MultiStreamTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_trial(&mut rng, i, cfg, 8 + i)).collect()
}

fn short_schedule() -> TrainSchedule {
    TrainSchedule { epochs: 2, p2_batches: 2, ..TrainSchedule::default() }
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config(WindowMode::Causal);
    let trials = data(14, &cfg, 4);
    let techs: Vec<usize> = trials.iter().map(|t| t.technique).collect();
    let run = || {
        let mut m = model(cfg.clone(), VariantKind::Full);
        let trace = train_minimax(&mut m, &trials, Some(&techs), &short_schedule()).unwrap();
        (m, trace)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(ta.epochs.len(), 2);
    assert!(ta.epochs.iter().all(|e| e.estimator.is_finite() && e.adversary.is_some()));
}

#[test]
fn phases_only_move_their_own_groups() {
    let cfg = small_config(WindowMode::Causal);
    let trials = data(15, &cfg, 3);
    let techs: Vec<usize> = trials.iter().map(|t| t.technique).collect();
    let base = model(cfg.clone(), VariantKind::Full);

    let mut est_only = base.clone();
    let sched = TrainSchedule { epochs: 1, p2_batches: 1, adversary_learning_rate: 1e-300, ..TrainSchedule::default() };
    train_minimax(&mut est_only, &trials, Some(&techs), &sched).unwrap();
    for name in ADVERSARY_SIDE {
        for (a, b) in snapshot(&base, name).iter().zip(snapshot(&est_only, name)) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-250, "{name} moved in the estimator phase");
            }
        }
    }
    for name in ESTIMATOR_SIDE {
        assert_ne!(snapshot(&base, name), snapshot(&est_only, name), "{name} did not train");
    }

    let mut adv_only = base.clone();
    let sched = TrainSchedule { epochs: 1, p2_batches: 3, learning_rate: 1e-300, ..TrainSchedule::default() };
    train_minimax(&mut adv_only, &trials, Some(&techs), &sched).unwrap();
    for name in ADVERSARY_SIDE {
        assert_ne!(snapshot(&base, name), snapshot(&adv_only, name), "{name} did not train");
    }
}

#[test]
fn na_training_touches_only_features_and_estimator() {
    let cfg = small_config(WindowMode::Noncausal);
    let trials = data(16, &cfg, 3);
    let mut m = model(cfg, VariantKind::Na);
    let trace = train_minimax(&mut m, &trials, None, &short_schedule()).unwrap();
    assert!(trace.epochs.iter().all(|e| e.adversary.is_none() && e.estimator.recon == 0.0));
}

#[test]
fn full_training_needs_technique_labels() {
    let cfg = small_config(WindowMode::Causal);
    let trials = data(17, &cfg, 3);
    let mut m = model(cfg, VariantKind::Full);
    let s = short_schedule();
    assert!(matches!(train_minimax(&mut m, &trials, None, &s), Err(crate::Error::Data(_))));
    assert!(matches!(train_minimax(&mut m, &trials, Some(&[0, 1]), &s), Err(crate::Error::Data(_))));
    assert!(matches!(train_minimax(&mut m, &trials, Some(&[0, 1, 5]), &s), Err(crate::Error::Data(_))));
    assert!(matches!(train_minimax(&mut m, &[], Some(&[]), &s), Err(crate::Error::Data(_))));
}

#[test]
fn divergence_is_reported_with_epoch() {
    let cfg = small_config(WindowMode::Causal);
    let trials = data(18, &cfg, 2);
    let mut m = model(cfg, VariantKind::Na);
    let gi = m.store.group_index(ESTIMATOR).unwrap();
    m.store.group_mut(gi).tensor_mut(0).data_mut()[0] = f64::NAN;
    let err = train_minimax(&mut m, &trials, None, &short_schedule()).unwrap_err();
    assert!(matches!(err, crate::Error::Training { epoch: 0, .. }), "{err:?}");
}

#[test]
fn training_reduces_state_loss() {
    let cfg = small_config(WindowMode::Causal);
    let trials = data(19, &cfg, 4);
    let mut m = model(cfg, VariantKind::Na);
    let sched = TrainSchedule { epochs: 30, learning_rate: 2e-2, ..TrainSchedule::default() };
    let trace = train_minimax(&mut m, &trials, None, &sched).unwrap();
    let first = trace.epochs[0].estimator.state;
    let last = trace.epochs.last().unwrap().estimator.state;
    assert!(last < 0.7 * first, "{first} -> {last}");
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(WindowMode::Noncausal);
    let trials = data(20, &cfg, 3);
    let techs: Vec<usize> = trials.iter().map(|t| t.technique).collect();
    let mut m = model(cfg, VariantKind::Full);
    train_minimax(&mut m, &trials, Some(&techs), &short_schedule()).unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back, m);
    for (a, b) in m.store.groups().iter().zip(back.store.groups()) {
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
    assert_eq!(back.predict_proba(&trials[0]).unwrap(), m.predict_proba(&trials[0]).unwrap());
    let path2 = dir.path().join("again.json");
    back.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn checkpoint_version_and_format_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(tiny_config(WindowMode::Causal), VariantKind::No);
    let path = dir.path().join("m.json");
    m.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"version\": 1", "\"version\": 7", 1)).unwrap();
    assert!(matches!(Model::load(&path), Err(crate::Error::Version { .. })));
    std::fs::write(&path, "{\"format\": \"other\"}").unwrap();
    assert!(matches!(Model::load(&path), Err(crate::Error::Parse { .. })));
    std::fs::write(&path, "{\n\"format\": ").unwrap();
    assert!(matches!(Model::load(&path), Err(crate::Error::Parse { line: 2, .. })));
}

#[test]
fn embeddings_are_instance_means() {
    let cfg = small_config(WindowMode::Causal);
    let m = model(cfg.clone(), VariantKind::No);
    let trials = data(21, &cfg, 2);
    let recs = export_embeddings(&m, &trials).unwrap();
    let runs: usize = trials.iter().map(|t| t.state_runs().len()).sum();
    assert_eq!(recs.len(), runs);
    let (e1, _) = m.codes(&trials[0]).unwrap();
    let r = &recs[0];
    let want: f64 = (r.start..r.end).map(|t| e1.row(t)[0]).sum::<f64>() / (r.end - r.start) as f64;
    assert!((r.e1[0] - want).abs() < 1e-12);
    assert!(export_embeddings(&model(cfg, VariantKind::Na), &trials).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    write_embeddings(&path, &recs).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "trial_id,state,start,end,e1_0,e1_1,e1_2,e2_0,e2_1,e2_2");
    assert_eq!(lines.count(), recs.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn codes_stay_in_open_unit_interval(seed in 0u64..500, len in 3usize..10) {
        let cfg = ModelConfig { seed, ..tiny_config(WindowMode::Causal) };
        let m = model(cfg.clone(), VariantKind::Full);
        let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(seed), 0, &cfg, len);
        let (e1, e2) = m.codes(&trial).unwrap();
        prop_assert!(e1.data().iter().chain(e2.data()).all(|x| x.abs() < 1.0));
    }

    #[test]
    fn probabilities_are_distributions(seed in 0u64..500, len in 1usize..8, noncausal in any::<bool>()) {
        let mode = if noncausal { WindowMode::Noncausal } else { WindowMode::Causal };
        let cfg = ModelConfig { seed, ..tiny_config(mode) };
        let m = model(cfg.clone(), VariantKind::Na);
        let trial = random_trial(&mut ChaCha8Rng::seed_from_u64(seed + 1), 0, &cfg, len);
        let p = m.predict_proba(&trial).unwrap();
        for r in 0..len {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
