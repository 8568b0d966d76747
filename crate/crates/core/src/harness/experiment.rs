use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_fold, EvalReport, FoldResult};
use super::{ClusteringConfig, ExperimentConfig};
use crate::clustering::{cluster, pairwise_dtw, select_k_matrix, ClusterAssignment, TrialSeries};
use crate::dataset::{split, Fold, MultiStreamTrial, WindowMode};
use crate::error::{Error, Result};
use crate::invariance::{train_minimax, Model, ModelConfig, VariantKind};

/// Technique labels derived from the kinematics of a set of trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TechniqueClustering {
    /// Trial ids in clustering order; `labels[i]` belongs to `ids[i]`.
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub silhouette: Option<f64>,
}

/// DTW k-medoids over the kinematics of `trials`, scanning k or using `fixed_k`.
pub fn cluster_techniques(trials: &[&MultiStreamTrial], cfg: &ClusteringConfig, seed: u64) -> Result<TechniqueClustering> {
    cfg.validate()?;
    let series: Vec<TrialSeries<f64>> = trials.iter().map(|t| t.kinematics_series()).collect();
    let dm = pairwise_dtw(&series, &cfg.dtw_options())?;
    let assignment: ClusterAssignment<f64> = match cfg.fixed_k {
        Some(k) => cluster(&dm, k.min(dm.len()), cfg.restarts, seed)?,
        None => {
            let k_max = cfg.k_max.min(dm.len());
            let k_min = cfg.k_min.min(k_max);
            select_k_matrix(&dm, k_min, k_max, cfg.restarts, seed)?.chosen().clone()
        }
    };
    Ok(TechniqueClustering {
        ids: dm.ids().to_vec(),
        labels: assignment.labels,
        k: assignment.k,
        silhouette: assignment.silhouette,
    })
}

/// `base` with stream sizes and state count taken from the data.
pub fn model_config_for(
    base: &ModelConfig,
    trials: &[&MultiStreamTrial],
    techniques: usize,
    mode: WindowMode,
    seed: u64,
) -> Result<ModelConfig> {
    let first = trials.first().ok_or_else(|| Error::data("no trials"))?;
    Ok(ModelConfig {
        vis_channels: first.vis.cols(),
        kin_channels: first.kin.cols(),
        evt_channels: first.evt.cols(),
        states: first.states,
        techniques,
        mode,
        seed,
        ..base.clone()
    })
}

/// Checks that train and test partition `all_ids` and that clustering saw only training trials.
pub fn audit_fold(fold: &Fold, clustered_ids: &[usize], all_ids: &BTreeSet<usize>) -> Result<()> {
    let train: BTreeSet<usize> = fold.train.iter().copied().collect();
    let test: BTreeSet<usize> = fold.test.iter().copied().collect();
    if train.len() != fold.train.len() || test.len() != fold.test.len() {
        return Err(Error::data(format!("fold {} lists a trial twice", fold.index)));
    }
    if let Some(id) = train.intersection(&test).next() {
        return Err(Error::data(format!("fold {}: trial {id} is in both train and test", fold.index)));
    }
    let union: BTreeSet<usize> = train.union(&test).copied().collect();
    if &union != all_ids {
        return Err(Error::data(format!("fold {} does not cover the dataset", fold.index)));
    }
    if let Some(id) = clustered_ids.iter().find(|id| !train.contains(id)) {
        return Err(Error::data(format!("fold {}: clustering saw non-training trial {id}", fold.index)));
    }
    Ok(())
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

fn run_fold(
    by_id: &BTreeMap<usize, &MultiStreamTrial>,
    all_ids: &BTreeSet<usize>,
    fold: &Fold,
    cfg: &ExperimentConfig,
    kind: VariantKind,
    mode: WindowMode,
    seed: u64,
) -> Result<FoldResult> {
    let pick = |ids: &[usize]| -> Result<Vec<&MultiStreamTrial>> {
        ids.iter().map(|id| by_id.get(id).copied().ok_or_else(|| Error::data(format!("unknown trial id {id}")))).collect()
    };
    let train = pick(&fold.train)?;
    let test = pick(&fold.test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::data("empty train or test partition"));
    }
    let fs = fold_seed(seed, fold.index);
    let clustering = if kind == VariantKind::Full { Some(cluster_techniques(&train, &cfg.clustering, fs)?) } else { None };
    let clustered_ids = clustering.as_ref().map_or_else(Vec::new, |c| c.ids.clone());
    audit_fold(fold, &clustered_ids, all_ids)?;

    let techniques = clustering.as_ref().map_or(cfg.model.techniques, |c| c.k);
    let model_cfg = model_config_for(&cfg.model, &train, techniques, mode, fs)?;
    let mut model = Model::new(model_cfg, kind, cfg.weights)?;
    let owned: Vec<MultiStreamTrial> = train.iter().map(|t| (*t).clone()).collect();
    let schedule = crate::invariance::TrainSchedule { seed: fs ^ 0x5DEE_CE66, ..cfg.schedule.clone() };
    train_minimax(&mut model, &owned, clustering.as_ref().map(|c| c.labels.as_slice()), &schedule)?;
    let (accuracy, frames, confusion) = evaluate_fold(&model, &test)?;
    Ok(FoldResult {
        index: fold.index,
        key: fold.key,
        train_ids: fold.train.clone(),
        test_ids: fold.test.clone(),
        clustered_ids,
        chosen_k: clustering.map(|c| c.k),
        accuracy,
        frames,
        confusion,
    })
}

fn run_on_folds(
    trials: &[MultiStreamTrial],
    folds: &[Fold],
    cfg: &ExperimentConfig,
    kind: VariantKind,
    mode: WindowMode,
    seed: u64,
) -> Result<EvalReport> {
    let start = Instant::now();
    let by_id: BTreeMap<usize, &MultiStreamTrial> = trials.iter().map(|t| (t.id, t)).collect();
    if by_id.len() != trials.len() {
        return Err(Error::data("duplicate trial ids"));
    }
    let all_ids: BTreeSet<usize> = by_id.keys().copied().collect();
    let results: Vec<FoldResult> = folds
        .par_iter()
        .map(|f| {
            run_fold(&by_id, &all_ids, f, cfg, kind, mode, seed).map_err(|e| Error::Fold { fold: f.index, source: Box::new(e) })
        })
        .collect::<Vec<Result<FoldResult>>>()
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_folds(
        kind,
        mode,
        seed,
        Some(cfg.split),
        Some(cfg.clone()),
        results,
        start.elapsed().as_secs_f64(),
    ))
}

/// Cross-validated training and evaluation of one variant. For the full
/// variant, techniques are clustered per fold from training trials only.
pub fn run_experiment(
    trials: &[MultiStreamTrial],
    cfg: &ExperimentConfig,
    kind: VariantKind,
    mode: WindowMode,
    seed: u64,
) -> Result<EvalReport> {
    let folds = split(trials, cfg.split, seed)?;
    run_on_folds(trials, &folds, cfg, kind, mode, seed)
}

/// Accuracy difference `to - from` in percentage points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub from: VariantKind,
    pub to: VariantKind,
    pub points: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub mode: WindowMode,
    pub seed: u64,
    pub folds: Vec<Fold>,
    /// One report per variant, in the order na, no, full.
    pub reports: Vec<EvalReport>,
    pub deltas: Vec<Delta>,
}

impl AblationReport {
    pub fn accuracy(&self, kind: VariantKind) -> Option<f64> {
        self.reports.iter().find(|r| r.variant == kind).map(|r| r.mean_accuracy)
    }

    pub fn runtime_secs(&self) -> f64 {
        self.reports.iter().map(|r| r.runtime_secs).sum()
    }
}

/// All three variants on the same folds with the same seeds.
pub fn run_ablation(trials: &[MultiStreamTrial], cfg: &ExperimentConfig, mode: WindowMode, seed: u64) -> Result<AblationReport> {
    let folds = split(trials, cfg.split, seed)?;
    let reports: Vec<EvalReport> =
        VariantKind::ALL.iter().map(|&k| run_on_folds(trials, &folds, cfg, k, mode, seed)).collect::<Result<_>>()?;
    for r in &reports {
        let same = r.folds.iter().zip(&folds).all(|(a, b)| a.train_ids == b.train && a.test_ids == b.test);
        if !same || r.folds.len() != folds.len() {
            return Err(Error::data(format!("{} variant ran on different folds", r.variant)));
        }
    }
    let acc = |i: usize| reports[i].mean_accuracy;
    let deltas = [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(a, b)| Delta { from: reports[a].variant, to: reports[b].variant, points: acc(b) - acc(a) })
        .collect();
    Ok(AblationReport { mode, seed, folds, reports, deltas })
}
