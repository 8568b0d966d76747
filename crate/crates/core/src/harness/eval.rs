use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{MultiStreamTrial, SplitSpec, WindowMode};
use crate::error::{Error, Result};
use crate::invariance::{Model, VariantKind};

/// Percentage of positions where `predicted` equals `truth`.
pub fn framewise_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::dim(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::data("accuracy of an empty sequence"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truth.len() as f64)
}

/// `classes×classes` counts, rows indexed by the true class and columns by the prediction.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if predicted.len() != truth.len() {
        return Err(Error::dim(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::data(format!("class {} outside [0, {classes})", p.max(t))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn trace_accuracy(confusion: &[Vec<u64>]) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    let hits: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    100.0 * hits as f64 / total as f64
}

/// Result of training on one fold and evaluating on its held-out trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub index: usize,
    pub key: Option<usize>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    /// Trials whose kinematics entered technique clustering.
    pub clustered_ids: Vec<usize>,
    pub chosen_k: Option<usize>,
    pub accuracy: f64,
    pub frames: u64,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: VariantKind,
    pub mode: WindowMode,
    pub seed: u64,
    pub split: Option<SplitSpec>,
    pub config: Option<super::ExperimentConfig>,
    pub folds: Vec<FoldResult>,
    /// Mean and sample standard deviation of the per-fold accuracies (%).
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Pooled over all folds.
    pub confusion: Vec<Vec<u64>>,
    pub frames: u64,
    /// Wall-clock seconds; never written to report files.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl EvalReport {
    pub(crate) fn from_folds(
        variant: VariantKind,
        mode: WindowMode,
        seed: u64,
        split: Option<SplitSpec>,
        config: Option<super::ExperimentConfig>,
        folds: Vec<FoldResult>,
        runtime_secs: f64,
    ) -> Self {
        let classes = folds.first().map_or(0, |f| f.confusion.len());
        let mut confusion = vec![vec![0u64; classes]; classes];
        for f in &folds {
            for (row, frow) in confusion.iter_mut().zip(&f.confusion) {
                for (c, v) in row.iter_mut().zip(frow) {
                    *c += v;
                }
            }
        }
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&accs);
        let frames = folds.iter().map(|f| f.frames).sum();
        Self { variant, mode, seed, split, config, folds, mean_accuracy, std_accuracy, confusion, frames, runtime_secs }
    }

    /// Accuracy recomputed from the pooled confusion matrix.
    pub fn pooled_accuracy(&self) -> f64 {
        trace_accuracy(&self.confusion)
    }
}

pub(crate) fn evaluate_fold(model: &Model, trials: &[&MultiStreamTrial]) -> Result<(f64, u64, Vec<Vec<u64>>)> {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for t in trials {
        predicted.extend(model.predict(t)?);
        truth.extend_from_slice(&t.labels);
    }
    let confusion = confusion_matrix(&predicted, &truth, model.config.states)?;
    let accuracy = framewise_accuracy(&predicted, &truth)?;
    Ok((accuracy, truth.len() as u64, confusion))
}

/// Frame-wise evaluation of a trained model over whole test trials.
pub fn evaluate(model: &Model, trials: &[MultiStreamTrial], mode: WindowMode, seed: u64) -> Result<EvalReport> {
    let start = Instant::now();
    if mode != model.config.mode {
        return Err(Error::config(format!("model was built for {} windows, evaluation asked for {mode}", model.config.mode)));
    }
    if trials.is_empty() {
        return Err(Error::data("no trials to evaluate"));
    }
    let refs: Vec<&MultiStreamTrial> = trials.iter().collect();
    let (accuracy, frames, confusion) = evaluate_fold(model, &refs)?;
    let fold = FoldResult {
        index: 0,
        key: None,
        train_ids: Vec::new(),
        test_ids: trials.iter().map(|t| t.id).collect(),
        clustered_ids: Vec::new(),
        chosen_k: None,
        accuracy,
        frames,
        confusion,
    };
    Ok(EvalReport::from_folds(model.variant, mode, seed, None, None, vec![fold], start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariance::{groups, LossWeights, ModelConfig};
    use crate::Tensor;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(framewise_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(framewise_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(framewise_accuracy(&[0, 1, 2, 3], &[0, 1, 0, 0]).unwrap(), 50.0);
        assert!(matches!(framewise_accuracy(&[0], &[0, 1]), Err(Error::Dimension(_))));
        assert!(framewise_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    fn trial(labels: Vec<usize>) -> MultiStreamTrial {
        let n = labels.len();
        MultiStreamTrial {
            id: 0,
            user: 0,
            technique: 0,
            rate: 10.0,
            states: 3,
            kin: Tensor::filled(&[n, 2], 0.5),
            vis: Tensor::filled(&[n, 2], -0.5),
            evt: Tensor::zeros(&[n, 1]),
            labels,
        }
    }

    fn constant_model(class: usize) -> Model {
        let cfg = ModelConfig {
            vis_channels: 2,
            kin_channels: 2,
            evt_channels: 1,
            states: 3,
            vis_hidden: 2,
            kin_hidden: 2,
            evt_hidden: 2,
            attention_dim: 2,
            latent: 2,
            estimator_hidden: 2,
            t_obs: 4,
            ..ModelConfig::default()
        };
        let mut m = Model::new(cfg, VariantKind::Na, LossWeights::default()).unwrap();
        let out = m.parts.estimator.out.clone();
        m.store.get_mut(out.w).data_mut().fill(0.0);
        m.store.get_mut(out.b).data_mut()[class] = 5.0;
        assert!(m.group_names().contains(&groups::ESTIMATOR));
        m
    }

    #[test]
    fn constant_predictor_scores_class_fraction() {
        let m = constant_model(1);
        let t = trial(vec![0, 1, 1, 2, 1, 0, 0, 1, 2, 2]);
        let r = evaluate(&m, &[t.clone()], WindowMode::Causal, 0).unwrap();
        assert!((r.mean_accuracy - 40.0).abs() < 1e-12);
        for (s, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>() as usize, t.labels.iter().filter(|&&l| l == s).count());
        }
        assert_eq!(r.frames, 10);
        assert!((r.pooled_accuracy() - r.mean_accuracy).abs() < 1e-9);
    }

    #[test]
    fn evaluation_checks_mode_and_states() {
        let m = constant_model(0);
        let t = trial(vec![0, 1]);
        assert!(matches!(evaluate(&m, &[t.clone()], WindowMode::Noncausal, 0), Err(Error::Config(_))));
        let mut bad = t;
        bad.states = 4;
        assert!(matches!(evaluate(&m, &[bad], WindowMode::Causal, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn accuracy_matches_confusion_trace(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = confusion_matrix(&p, &t, 4).unwrap();
            prop_assert_eq!(m.iter().flatten().sum::<u64>() as usize, t.len());
            prop_assert!((trace_accuracy(&m) - framewise_accuracy(&p, &t).unwrap()).abs() < 1e-9);
        }
    }
}
