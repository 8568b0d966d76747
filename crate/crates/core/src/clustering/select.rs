use serde::{Deserialize, Serialize};

use super::dtw::{pairwise_dtw, DistanceMatrix, DtwOptions, TrialSeries};
use super::kmedoids::{cluster, cluster_warm, ClusterAssignment};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KCurvePoint<T> {
    pub k: usize,
    pub inertia: T,
    pub silhouette: T,
}

/// Outcome of scanning a range of cluster counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection<T> {
    pub chosen_k: usize,
    pub curve: Vec<KCurvePoint<T>>,
    pub assignments: Vec<ClusterAssignment<T>>,
}

impl<T: Scalar> KSelection<T> {
    pub fn chosen(&self) -> &ClusterAssignment<T> {
        self.assignments.iter().find(|a| a.k == self.chosen_k).expect("chosen k is in range")
    }
}

/// Clusters for every k in `k_min..=k_max` and picks the k with the highest mean
/// silhouette (smallest k on ties). Each k is warm-started from the best k-1 solution,
/// so inertia never increases along the curve.
pub fn select_k_matrix<T: Scalar>(
    dm: &DistanceMatrix<T>,
    k_min: usize,
    k_max: usize,
    restarts: usize,
    seed: u64,
) -> Result<KSelection<T>> {
    if k_min < 2 || k_min > k_max || k_max > dm.len() {
        return Err(Error::config(format!("k range [{k_min}, {k_max}] is not within [2, {}]", dm.len())));
    }
    let mut assignments: Vec<ClusterAssignment<T>> = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        let a = match assignments.last() {
            Some(prev) => cluster_warm(dm, prev, restarts, seed)?,
            None => cluster(dm, k, restarts, seed)?,
        };
        assignments.push(a);
    }
    let curve: Vec<KCurvePoint<T>> = assignments
        .iter()
        .map(|a| KCurvePoint { k: a.k, inertia: a.inertia, silhouette: a.silhouette.expect("k >= 2") })
        .collect();
    let mut best = &curve[0];
    for p in &curve[1..] {
        if p.silhouette > best.silhouette {
            best = p;
        }
    }
    Ok(KSelection { chosen_k: best.k, curve, assignments })
}

/// DTW distances over `trials`, then [`select_k_matrix`].
pub fn select_k<T: Scalar>(
    trials: &[TrialSeries<T>],
    k_min: usize,
    k_max: usize,
    restarts: usize,
    seed: u64,
    opts: &DtwOptions,
) -> Result<(DistanceMatrix<T>, KSelection<T>)> {
    let dm = pairwise_dtw(trials, opts)?;
    let sel = select_k_matrix(&dm, k_min, k_max, restarts, seed)?;
    Ok((dm, sel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(points: &[f64]) -> DistanceMatrix<f64> {
        let n = points.len();
        let data = (0..n * n).map(|x| (points[x / n] - points[x % n]).abs()).collect();
        DistanceMatrix::new((0..n).collect(), data).unwrap()
    }

    #[test]
    fn three_groups_on_a_line_pick_three() {
        let pts = [0.0, 0.1, 0.2, 10.0, 10.1, 10.2, 20.0, 20.1, 20.2, 20.3];
        let sel = select_k_matrix(&line(&pts), 2, 8, 5, 0).unwrap();
        assert_eq!(sel.chosen_k, 3);
        assert_eq!(sel.curve.iter().map(|p| p.k).collect::<Vec<_>>(), (2..=8).collect::<Vec<_>>());
    }

    #[test]
    fn inertia_curve_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..30.0)).collect();
        let sel = select_k_matrix(&line(&pts), 2, 10, 3, 4).unwrap();
        assert!(sel.curve.windows(2).all(|w| w[1].inertia <= w[0].inertia));
    }

    #[test]
    fn ties_resolve_to_smaller_k() {
        let n = 6;
        let mut data = vec![1.0; n * n];
        for i in 0..n {
            data[i * n + i] = 0.0;
        }
        let dm = DistanceMatrix::new((0..n).collect(), data).unwrap();
        let sel = select_k_matrix(&dm, 2, 5, 2, 0).unwrap();
        assert!(sel.curve.iter().all(|p| p.silhouette == sel.curve[0].silhouette));
        assert_eq!(sel.chosen_k, 2);
    }

    #[test]
    fn degenerate_ranges_are_rejected() {
        let dm = line(&[0.0, 1.0, 2.0, 3.0]);
        for (lo, hi) in [(1, 3), (3, 2), (2, 5)] {
            assert!(matches!(select_k_matrix(&dm, lo, hi, 1, 0), Err(Error::Config(_))));
        }
    }
}
