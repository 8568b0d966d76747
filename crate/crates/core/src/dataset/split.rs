use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiStreamTrial;
use crate::error::{Error, Result};

/// One train/test partition of trial ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// User or technique held out, for keyed splits.
    pub key: Option<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    Louo,
    Kfold { k: usize },
    LeaveOneTechniqueOut,
}

pub fn split(trials: &[MultiStreamTrial], spec: SplitSpec, seed: u64) -> Result<Vec<Fold>> {
    match spec {
        SplitSpec::Louo => split_louo(trials),
        SplitSpec::Kfold { k } => split_kfold(trials, k, seed),
        SplitSpec::LeaveOneTechniqueOut => split_leave_one_technique_out(trials),
    }
}

fn keyed(trials: &[MultiStreamTrial], key: impl Fn(&MultiStreamTrial) -> usize) -> Vec<Fold> {
    let keys: BTreeSet<usize> = trials.iter().map(&key).collect();
    keys.into_iter()
        .enumerate()
        .map(|(index, k)| {
            let (test, train): (Vec<_>, Vec<_>) = trials.iter().partition(|t| key(t) == k);
            Fold {
                index,
                key: Some(k),
                train: train.iter().map(|t| t.id).collect(),
                test: test.iter().map(|t| t.id).collect(),
            }
        })
        .collect()
}

/// One fold per user, testing on that user's trials.
pub fn split_louo(trials: &[MultiStreamTrial]) -> Result<Vec<Fold>> {
    let users: BTreeSet<usize> = trials.iter().map(|t| t.user).collect();
    if users.len() < 2 {
        return Err(Error::config("leave-one-user-out needs at least 2 users; use k-fold instead"));
    }
    Ok(keyed(trials, |t| t.user))
}

/// One fold per ground-truth technique, testing on that technique's trials.
pub fn split_leave_one_technique_out(trials: &[MultiStreamTrial]) -> Result<Vec<Fold>> {
    let techniques: BTreeSet<usize> = trials.iter().map(|t| t.technique).collect();
    if techniques.len() < 2 {
        return Err(Error::config("leave-one-technique-out needs at least 2 techniques"));
    }
    Ok(keyed(trials, |t| t.technique))
}

/// Seeded shuffle of trial ids, then `k` contiguous folds whose sizes differ by at most one.
pub fn split_kfold(trials: &[MultiStreamTrial], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = trials.len();
    if k < 2 || k > n {
        return Err(Error::config(format!("k-fold needs 2 ≤ k ≤ {n}, got k = {k}")));
    }
    let mut ids: Vec<usize> = trials.iter().map(|t| t.id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for index in 0..k {
        let size = n / k + usize::from(index < n % k);
        let test: Vec<usize> = ids[start..start + size].to_vec();
        let train = ids.iter().copied().filter(|id| !test.contains(id)).collect();
        folds.push(Fold { index, key: None, train, test });
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_from_config, GeneratorConfig};

    fn trials(n: usize, users: usize) -> Vec<MultiStreamTrial> {
        let cfg = GeneratorConfig { trials: n, users, states: 3, duration_range: (0.3, 0.6), segments: 3, ..Default::default() };
        generate_from_config(&cfg).unwrap()
    }

    fn assert_partition(folds: &[Fold], all: &[MultiStreamTrial]) {
        let everything: BTreeSet<usize> = all.iter().map(|t| t.id).collect();
        let mut seen = BTreeSet::new();
        for f in folds {
            let train: BTreeSet<usize> = f.train.iter().copied().collect();
            let test: BTreeSet<usize> = f.test.iter().copied().collect();
            assert!(train.is_disjoint(&test));
            assert_eq!(&train | &test, everything);
            for id in &test {
                assert!(seen.insert(*id), "trial {id} tested twice");
            }
        }
        assert_eq!(seen, everything);
    }

    #[test]
    fn louo_one_fold_per_user_without_leakage() {
        let t = trials(15, 5);
        let folds = split_louo(&t).unwrap();
        assert_eq!(folds.len(), 5);
        assert_partition(&folds, &t);
        for f in &folds {
            let user = f.key.unwrap();
            assert!(f.test.iter().all(|&id| t[id].user == user));
            assert!(f.train.iter().all(|&id| t[id].user != user));
        }
    }

    #[test]
    fn louo_with_one_user_points_to_kfold() {
        let err = split_louo(&trials(4, 1)).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("k-fold")));
    }

    #[test]
    fn kfold_sizes_and_determinism() {
        let t = trials(10, 2);
        let folds = split_kfold(&t, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 2));
        assert_partition(&folds, &t);
        assert_eq!(folds, split_kfold(&t, 5, 3).unwrap());

        let uneven = split_kfold(&trials(11, 1), 4, 0).unwrap();
        let sizes: Vec<usize> = uneven.iter().map(|f| f.test.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn kfold_with_k_equal_n_leaves_one_out() {
        let t = trials(6, 2);
        let folds = split_kfold(&t, 6, 0).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 5));
        assert!(matches!(split_kfold(&t, 7, 0), Err(Error::Config(_))));
    }

    #[test]
    fn technique_folds_partition_and_isolate() {
        let t = trials(12, 2);
        let folds = split_leave_one_technique_out(&t).unwrap();
        assert_eq!(folds.len(), 3);
        assert_partition(&folds, &t);
        for f in &folds {
            let k = f.key.unwrap();
            assert!(f.test.iter().all(|&id| t[id].technique == k));
        }
    }
}
