use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dtw::DistanceMatrix;
use super::silhouette::silhouette_mean;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum assignment/update rounds per restart.
pub const MAX_ROUNDS: usize = 100;

/// Trial-level technique labels with the diagnostics behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment<T> {
    pub k: usize,
    /// Label of each trial, in distance-matrix order.
    pub labels: Vec<usize>,
    /// Row index of each cluster's medoid.
    pub medoids: Vec<usize>,
    pub medoid_ids: Vec<usize>,
    pub inertia: T,
    /// Mean silhouette; `None` when `k < 2`.
    pub silhouette: Option<T>,
}

impl<T: Scalar> ClusterAssignment<T> {
    /// Checks labels, medoids and non-empty clusters against a matrix of `n` trials.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.labels.len() != n {
            return Err(Error::dim(format!("{} labels for {n} trials", self.labels.len())));
        }
        if self.medoids.len() != self.k || self.labels.iter().any(|&l| l >= self.k) {
            return Err(Error::data(format!("labels or medoids out of range for k = {}", self.k)));
        }
        for c in 0..self.k {
            if !self.labels.contains(&c) {
                return Err(Error::data(format!("cluster {c} is empty")));
            }
        }
        Ok(())
    }
}

/// Sum of squared member-to-medoid distances.
pub fn inertia<T: Scalar>(dm: &DistanceMatrix<T>, labels: &[usize], medoids: &[usize]) -> T {
    labels.iter().enumerate().map(|(i, &l)| dm.get(i, medoids[l]).powi(2)).sum()
}

/// Nearest-medoid labels; ties go to the lowest cluster index.
fn assign<T: Scalar>(dm: &DistanceMatrix<T>, medoids: &[usize]) -> Vec<usize> {
    (0..dm.len())
        .map(|i| {
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate().skip(1) {
                if dm.get(i, m) < dm.get(i, medoids[best]) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Gives each empty cluster the point farthest from its current medoid.
fn repair_empty<T: Scalar>(dm: &DistanceMatrix<T>, medoids: &mut [usize], labels: &mut Vec<usize>) {
    for _ in 0..medoids.len() {
        let Some(empty) = (0..medoids.len()).find(|c| !labels.contains(c)) else { return };
        let far = (0..dm.len())
            .filter(|i| !medoids.contains(i))
            .max_by(|&a, &b| {
                let (da, db) = (dm.get(a, medoids[labels[a]]), dm.get(b, medoids[labels[b]]));
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
            });
        match far {
            Some(p) => {
                medoids[empty] = p;
                *labels = assign(dm, medoids);
                labels[p] = empty;
            }
            None => return,
        }
    }
}

/// Member minimizing total within-cluster distance; the current medoid wins ties.
fn update<T: Scalar>(dm: &DistanceMatrix<T>, labels: &[usize], medoids: &[usize]) -> Vec<usize> {
    (0..medoids.len())
        .map(|c| {
            let members: Vec<usize> = (0..dm.len()).filter(|&i| labels[i] == c).collect();
            let cost = |m: usize| members.iter().map(|&j| dm.get(m, j)).sum::<T>();
            let mut best = medoids[c];
            let mut best_cost = cost(best);
            for &m in &members {
                let v = cost(m);
                if v < best_cost {
                    best = m;
                    best_cost = v;
                }
            }
            best
        })
        .collect()
}

/// k-medoids++ seeding: first uniform, then proportional to squared distance to the nearest seed.
fn seed_medoids<T: Scalar>(dm: &DistanceMatrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = dm.len();
    let mut medoids = vec![rng.random_range(0..n)];
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if medoids.contains(&i) {
                    0.0
                } else {
                    medoids.iter().map(|&m| dm.get(i, m).as_f64()).fold(f64::INFINITY, f64::min).powi(2)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            chosen.expect("positive weight exists")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !medoids.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        medoids.push(pick);
    }
    medoids
}

struct State<T> {
    labels: Vec<usize>,
    medoids: Vec<usize>,
    inertia: T,
}

fn assigned<T: Scalar>(dm: &DistanceMatrix<T>, mut medoids: Vec<usize>) -> State<T> {
    let mut labels = assign(dm, &medoids);
    repair_empty(dm, &mut medoids, &mut labels);
    let inertia = inertia(dm, &labels, &medoids);
    State { labels, medoids, inertia }
}

/// Alternates assignment and medoid update from `medoids` until the medoids stop moving.
fn refine<T: Scalar>(dm: &DistanceMatrix<T>, medoids: Vec<usize>) -> State<T> {
    let mut state = assigned(dm, medoids);
    for _ in 0..MAX_ROUNDS {
        let next = update(dm, &state.labels, &state.medoids);
        if next == state.medoids {
            break;
        }
        state = assigned(dm, next);
    }
    state
}

/// Renumbers clusters by order of first appearance along the trial order.
fn canonical<T: Scalar>(state: State<T>) -> State<T> {
    let k = state.medoids.len();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &state.labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    for m in map.iter_mut().filter(|m| **m == usize::MAX) {
        *m = next;
        next += 1;
    }
    let mut medoids = vec![0; k];
    for (old, &new) in map.iter().enumerate() {
        medoids[new] = state.medoids[old];
    }
    State { labels: state.labels.iter().map(|&l| map[l]).collect(), medoids, inertia: state.inertia }
}

fn finish<T: Scalar>(dm: &DistanceMatrix<T>, state: State<T>) -> Result<ClusterAssignment<T>> {
    let state = canonical(state);
    let k = state.medoids.len();
    let silhouette = if k >= 2 { Some(silhouette_mean(dm, &state.labels)?.0) } else { None };
    Ok(ClusterAssignment {
        k,
        medoid_ids: state.medoids.iter().map(|&m| dm.ids()[m]).collect(),
        labels: state.labels,
        medoids: state.medoids,
        inertia: state.inertia,
        silhouette,
    })
}

fn check_k<T: Scalar>(dm: &DistanceMatrix<T>, k: usize, restarts: usize) -> Result<()> {
    if k == 0 || k > dm.len() {
        return Err(Error::config(format!("k = {k} is outside [1, {}]", dm.len())));
    }
    if restarts == 0 {
        return Err(Error::config("restarts must be positive"));
    }
    Ok(())
}

fn best_of<T: Scalar>(
    dm: &DistanceMatrix<T>,
    k: usize,
    restarts: usize,
    seed: u64,
    warm: Option<Vec<usize>>,
) -> State<T> {
    let mut best: Option<State<T>> = None;
    if let Some(m) = warm {
        let start = assigned(dm, m.clone());
        let refined = refine(dm, m);
        best = Some(if refined.inertia <= start.inertia { refined } else { start });
    }
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let state = refine(dm, seed_medoids(dm, k, &mut rng));
        if best.as_ref().is_none_or(|b| state.inertia < b.inertia) {
            best = Some(state);
        }
    }
    best.expect("restarts > 0")
}

/// k-medoids under the given distances; best of `restarts` seeded initializations by inertia.
pub fn cluster<T: Scalar>(dm: &DistanceMatrix<T>, k: usize, restarts: usize, seed: u64) -> Result<ClusterAssignment<T>> {
    check_k(dm, k, restarts)?;
    finish(dm, best_of(dm, k, restarts, seed, None))
}

/// Like [`cluster`], additionally refining `previous` medoids plus the farthest remaining point.
///
/// The warm start is kept unrefined when refinement would raise its inertia, so the
/// result's inertia is no larger than that of `previous`.
pub fn cluster_warm<T: Scalar>(
    dm: &DistanceMatrix<T>,
    previous: &ClusterAssignment<T>,
    restarts: usize,
    seed: u64,
) -> Result<ClusterAssignment<T>> {
    let k = previous.k + 1;
    check_k(dm, k, restarts)?;
    let mut medoids = previous.medoids.clone();
    let far = (0..dm.len())
        .filter(|i| !medoids.contains(i))
        .max_by(|&a, &b| {
            let near = |i: usize| medoids.iter().map(|&m| dm.get(i, m)).fold(T::infinity(), T::min);
            near(a).partial_cmp(&near(b)).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
        })
        .expect("k <= n leaves a free point");
    medoids.push(far);
    finish(dm, best_of(dm, k, restarts, seed, Some(medoids)))
}
