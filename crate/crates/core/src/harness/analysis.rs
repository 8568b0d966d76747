use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClusteringConfig;
use crate::clustering::{pairwise_dtw, select_k_matrix, silhouette_mean, technique_labels, DistanceMatrix, TechniqueLabel, TrialSeries};
use crate::dataset::MultiStreamTrial;
use crate::encoders::uniform;
use crate::error::{Error, Result};
use crate::invariance::{export_embeddings, Model};
use crate::numerics::{Adam, AdamConfig};
use crate::{Graph, ParamStore, Tensor};

/// Silhouettes of state-instance mean codes grouped by state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementReport {
    pub e1_silhouette: f64,
    pub e2_silhouette: f64,
    pub instances: usize,
    /// Instance count per state index.
    pub instances_per_state: Vec<usize>,
}

fn euclidean_matrix(points: &[Vec<f64>]) -> Result<DistanceMatrix<f64>> {
    let n = points.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix::new((0..n).collect(), data)
}

/// Silhouette of `e1` and of `e2` instance means, using state labels as clusters.
pub fn disentanglement_report(model: &Model, trials: &[MultiStreamTrial]) -> Result<DisentanglementReport> {
    let records = export_embeddings(model, trials)?;
    let labels: Vec<usize> = records.iter().map(|r| r.state).collect();
    let mut instances_per_state = vec![0usize; model.config.states];
    for &s in &labels {
        instances_per_state[s] += 1;
    }
    if instances_per_state.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::config("disentanglement needs instances of at least 2 states"));
    }
    let e1: Vec<Vec<f64>> = records.iter().map(|r| r.e1.clone()).collect();
    let e2: Vec<Vec<f64>> = records.iter().map(|r| r.e2.clone()).collect();
    let (s1, _) = silhouette_mean(&euclidean_matrix(&e1)?, &labels)?;
    let (s2, _) = silhouette_mean(&euclidean_matrix(&e2)?, &labels)?;
    Ok(DisentanglementReport { e1_silhouette: s1, e2_silhouette: s2, instances: records.len(), instances_per_state })
}

/// Inertia and silhouette as functions of k, with inertia also relative to its maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    pub ks: Vec<usize>,
    pub inertia: Vec<f64>,
    pub normalized_inertia: Vec<f64>,
    pub silhouette: Vec<f64>,
    pub chosen_k: usize,
}

/// k scan over trial kinematics; also returns the per-trial labels at the chosen k.
pub fn k_selection_report(
    trials: &[MultiStreamTrial],
    cfg: &ClusteringConfig,
    seed: u64,
) -> Result<(KSelectionReport, Vec<TechniqueLabel>)> {
    cfg.validate()?;
    let series: Vec<TrialSeries<f64>> = trials.iter().map(|t| t.kinematics_series()).collect();
    let dm = pairwise_dtw(&series, &cfg.dtw_options())?;
    let sel = select_k_matrix(&dm, cfg.k_min, cfg.k_max.min(dm.len()), cfg.restarts, seed)?;
    let inertia: Vec<f64> = sel.curve.iter().map(|p| p.inertia).collect();
    let top = inertia.iter().copied().fold(0.0, f64::max);
    let report = KSelectionReport {
        ks: sel.curve.iter().map(|p| p.k).collect(),
        normalized_inertia: inertia.iter().map(|&i| if top > 0.0 { i / top } else { 1.0 }).collect(),
        inertia,
        silhouette: sel.curve.iter().map(|p| p.silhouette).collect(),
        chosen_k: sel.chosen_k,
    };
    Ok((report, technique_labels(&dm, sel.chosen())))
}

/// Settings of the linear softmax probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 0.05, seed: 0 }
    }
}

fn standardize(train: &Tensor, test: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, d) = train.dims2();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(train.row(r)) {
            *m += x / n as f64;
        }
    }
    for r in 0..n {
        for c in 0..d {
            sd[c] += (train.row(r)[c] - mean[c]).powi(2) / n as f64;
        }
    }
    let sd: Vec<f64> = sd.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    let apply = |t: &Tensor| -> Result<Tensor> {
        let (rows, cols) = t.dims2();
        let data = (0..rows * cols).map(|i| (t.data()[i] - mean[i % cols]) / sd[i % cols]).collect();
        Tensor::matrix(rows, cols, data)
    };
    Ok((apply(train)?, apply(test)?))
}

/// Trains a linear softmax classifier on `train_x` rows (standardized with
/// training statistics) and returns its accuracy on `test_x` as a fraction.
pub fn probe_accuracy(
    train_x: &Tensor,
    train_y: &[usize],
    test_x: &Tensor,
    test_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() || train_x.cols() != test_x.cols() {
        return Err(Error::dim("probe inputs and labels disagree in size"));
    }
    if test_y.is_empty() || classes < 2 {
        return Err(Error::data("probe needs test rows and at least 2 classes"));
    }
    let (train_x, test_x) = standardize(train_x, test_x)?;
    let d = train_x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let bound = (6.0 / (d + classes) as f64).sqrt();
    let w = store.add("probe", "w", uniform(&mut rng, &[d, classes], bound))?;
    let b = store.add("probe", "b", Tensor::zeros(&[classes]))?;
    let mut adam = Adam::new(AdamConfig { rate: cfg.learning_rate, ..AdamConfig::default() });
    for _ in 0..cfg.epochs {
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.constant(train_x.clone());
            let (wn, bn) = (g.param(w), g.param(b));
            let logits = g.affine(x, wn, bn)?;
            let p = g.softmax_rows(logits)?;
            let loss = g.cross_entropy(p, train_y)?;
            g.backward(loss)?
        };
        adam.step(&mut store, &grads)?;
    }
    let mut g = Graph::new(&store);
    let x = g.constant(test_x);
    let (wn, bn) = (g.param(w), g.param(b));
    let logits = g.affine(x, wn, bn)?;
    let scores = g.value(logits);
    let hits = (0..scores.rows())
        .filter(|&r| {
            let row = scores.row(r);
            let best = (0..classes).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            best == test_y[r]
        })
        .count();
    Ok(hits as f64 / test_y.len() as f64)
}

/// Probe accuracies for technique recovery from frozen `e1` and frozen `H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub classes: usize,
    pub chance: f64,
    pub e1_accuracy: f64,
    pub h_accuracy: f64,
}

/// Splits each trial's rows into alternating blocks of `block` frames; even blocks train, odd blocks test.
fn interleaved_split(per_trial: &[Tensor], labels: &[usize], block: usize) -> Result<(Tensor, Vec<usize>, Tensor, Vec<usize>)> {
    let cols = per_trial.first().map_or(0, |t| t.cols());
    let (mut train, mut train_y, mut test, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (t, &label) in per_trial.iter().zip(labels) {
        for r in 0..t.rows() {
            if (r / block) % 2 == 0 {
                train.extend_from_slice(t.row(r));
                train_y.push(label);
            } else {
                test.extend_from_slice(t.row(r));
                test_y.push(label);
            }
        }
    }
    Ok((Tensor::matrix(train_y.len(), cols, train)?, train_y, Tensor::matrix(test_y.len(), cols, test)?, test_y))
}

/// Fresh linear probes for technique on frozen `e1` and frozen `H` of `trials`.
///
/// Frames are split into alternating blocks of `block` frames; probes train on
/// even blocks and are scored on odd ones. `classes` is the technique count.
pub fn technique_probe(
    model: &Model,
    trials: &[MultiStreamTrial],
    labels: &[usize],
    classes: usize,
    block: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if trials.len() != labels.len() {
        return Err(Error::data("one technique label per trial is required"));
    }
    if block == 0 {
        return Err(Error::config("probe block length must be positive"));
    }
    let mut e1 = Vec::with_capacity(trials.len());
    let mut h = Vec::with_capacity(trials.len());
    for t in trials {
        e1.push(model.codes(t)?.0);
        h.push(model.feature_values(t)?);
    }
    let score = |rows: &[Tensor]| -> Result<f64> {
        let (x, y, tx, ty) = interleaved_split(rows, labels, block)?;
        probe_accuracy(&x, &y, &tx, &ty, classes, cfg)
    };
    Ok(ProbeReport { classes, chance: 1.0 / classes as f64, e1_accuracy: score(&e1)?, h_accuracy: score(&h)? })
}
