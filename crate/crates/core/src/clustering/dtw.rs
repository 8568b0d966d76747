use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One trial's kinematics as `len×channels` row-major frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSeries<T> {
    pub id: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> TrialSeries<T> {
    pub fn new(id: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || data.is_empty() || data.len() % channels != 0 {
            return Err(Error::dim(format!(
                "trial {id}: {} values do not form frames of {channels} channels",
                data.len()
            )));
        }
        Ok(Self { id, channels, data })
    }

    pub fn from_frames(id: usize, frames: &[Vec<T>]) -> Result<Self> {
        let channels = frames.first().map(Vec::len).unwrap_or(0);
        if frames.iter().any(|f| f.len() != channels) {
            return Err(Error::dim(format!("trial {id}: ragged frames")));
        }
        Self::new(id, channels, frames.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    /// Per-channel z-normalization over the whole trial; constant channels are only centered.
    pub fn znormalized(&self) -> Self {
        let n = T::of_usize(self.len());
        let mut data = self.data.clone();
        for c in 0..self.channels {
            let mean = (0..self.len()).map(|t| self.frame(t)[c]).sum::<T>() / n;
            let var = (0..self.len()).map(|t| (self.frame(t)[c] - mean).powi(2)).sum::<T>() / n;
            let sd = var.sqrt();
            let scale = if sd > T::of(1e-12) { sd } else { T::one() };
            for t in 0..self.len() {
                let x = &mut data[t * self.channels + c];
                *x = (*x - mean) / scale;
            }
        }
        Self { id: self.id, channels: self.channels, data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtwOptions {
    /// Z-normalize each trial per channel before aligning.
    pub znormalize: bool,
    /// Optional Sakoe-Chiba band half-width in frames.
    pub band: Option<usize>,
}

impl Default for DtwOptions {
    fn default() -> Self {
        Self { znormalize: true, band: None }
    }
}

fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

/// Minimal cumulative Euclidean frame cost over monotone alignments with
/// steps (1,0), (0,1), (1,1); not normalized by path length.
pub fn dtw_distance<T: Scalar>(a: &TrialSeries<T>, b: &TrialSeries<T>, band: Option<usize>) -> Result<T> {
    if a.channels() != b.channels() {
        return Err(Error::dim(format!(
            "trials {} and {} have {} and {} channels",
            a.id,
            b.id,
            a.channels(),
            b.channels()
        )));
    }
    let (n, m) = (a.len(), b.len());
    let width = band.map(|w| w.max(n.abs_diff(m)));
    let inf = T::infinity();
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    prev[0] = T::zero();
    for i in 1..=n {
        cur.fill(inf);
        let (lo, hi) = match width {
            Some(w) => (i.saturating_sub(w).max(1), (i + w).min(m)),
            None => (1, m),
        };
        for j in lo..=hi {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = euclidean(a.frame(i - 1), b.frame(j - 1)) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Symmetric matrix of pairwise DTW distances in trial order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix<T> {
    ids: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Validates zero diagonal, symmetry within 1e-9 and non-negativity.
    pub fn new(ids: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = ids.len();
        if data.len() != n * n {
            return Err(Error::dim(format!("{} entries for {n} trials", data.len())));
        }
        let tol = T::of(1e-9);
        for i in 0..n {
            if data[i * n + i] != T::zero() {
                return Err(Error::data(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let d = data[i * n + j];
                if !(d >= T::zero()) || !d.is_finite() {
                    return Err(Error::data(format!("invalid distance at ({i}, {j})")));
                }
                if (d - data[j * n + i]).abs() > tol {
                    return Err(Error::data(format!("asymmetric distance at ({i}, {j})")));
                }
            }
        }
        Ok(Self { ids, data })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.ids.len() + j]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.get(i, j);
            }
        }
        Self { ids: self.ids.clone(), data }
    }
}

fn prepare<T: Scalar>(trials: &[TrialSeries<T>], opts: &DtwOptions) -> Result<Vec<TrialSeries<T>>> {
    if trials.len() < 2 {
        return Err(Error::config(format!("pairwise DTW needs at least 2 trials, got {}", trials.len())));
    }
    let ch = trials[0].channels();
    if let Some(t) = trials.iter().find(|t| t.channels() != ch) {
        return Err(Error::dim(format!("trial {} has {} channels, expected {ch}", t.id, t.channels())));
    }
    Ok(if opts.znormalize { trials.iter().map(TrialSeries::znormalized).collect() } else { trials.to_vec() })
}

fn assemble<T: Scalar>(trials: &[TrialSeries<T>], upper: Vec<T>) -> Result<DistanceMatrix<T>> {
    let n = trials.len();
    let mut data = vec![T::zero(); n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = upper[k];
            data[j * n + i] = upper[k];
            k += 1;
        }
    }
    DistanceMatrix::new(trials.iter().map(|t| t.id).collect(), data)
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// All pairwise DTW distances, computed in parallel.
pub fn pairwise_dtw<T: Scalar>(trials: &[TrialSeries<T>], opts: &DtwOptions) -> Result<DistanceMatrix<T>> {
    let prepared = prepare(trials, opts)?;
    let upper = pairs(prepared.len())
        .into_par_iter()
        .map(|(i, j)| dtw_distance(&prepared[i], &prepared[j], opts.band))
        .collect::<Result<Vec<T>>>()?;
    assemble(&prepared, upper)
}

/// Single-threaded twin of [`pairwise_dtw`].
pub fn pairwise_dtw_serial<T: Scalar>(trials: &[TrialSeries<T>], opts: &DtwOptions) -> Result<DistanceMatrix<T>> {
    let prepared = prepare(trials, opts)?;
    let upper = pairs(prepared.len())
        .into_iter()
        .map(|(i, j)| dtw_distance(&prepared[i], &prepared[j], opts.band))
        .collect::<Result<Vec<T>>>()?;
    assemble(&prepared, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over every monotone alignment path.
    fn brute_force(a: &TrialSeries<f64>, b: &TrialSeries<f64>) -> f64 {
        fn walk(a: &TrialSeries<f64>, b: &TrialSeries<f64>, i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + euclidean(a.frame(i), b.frame(j));
            if i + 1 == a.len() && j + 1 == b.len() {
                *best = best.min(acc);
                return;
            }
            if i + 1 < a.len() {
                walk(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                walk(a, b, i, j + 1, acc, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                walk(a, b, i + 1, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(a, b, 0, 0, 0.0, &mut best);
        best
    }

    fn random_series(rng: &mut ChaCha8Rng, id: usize, len: usize, ch: usize) -> TrialSeries<f64> {
        TrialSeries::new(id, ch, (0..len * ch).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn identical_series_have_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_series(&mut rng, 0, 9, 3);
        assert_eq!(dtw_distance(&a, &a, None).unwrap(), 0.0);
    }

    #[test]
    fn single_frames_reduce_to_euclidean() {
        let a = TrialSeries::new(0, 2, vec![0.0, 0.0]).unwrap();
        let b = TrialSeries::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(dtw_distance(&a, &b, None).unwrap(), 5.0);
    }

    #[test]
    fn dynamic_program_equals_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let ch = rng.random_range(1..=3);
            let (la, lb) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let a = random_series(&mut rng, 0, la, ch);
            let b = random_series(&mut rng, 1, lb, ch);
            let dp = dtw_distance(&a, &b, None).unwrap();
            assert!((dp - brute_force(&a, &b)).abs() <= 1e-9);
        }
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let a = TrialSeries::new(0, 2, vec![0.0; 4]).unwrap();
        let b = TrialSeries::new(1, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(dtw_distance(&a, &b, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn wide_band_matches_unconstrained() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_series(&mut rng, 0, 12, 2);
        let b = random_series(&mut rng, 1, 15, 2);
        assert_eq!(dtw_distance(&a, &b, Some(20)).unwrap(), dtw_distance(&a, &b, None).unwrap());
        assert!(dtw_distance(&a, &b, Some(0)).unwrap() >= dtw_distance(&a, &b, None).unwrap());
    }

    #[test]
    fn pairwise_matrix_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_series(&mut rng, 10, 8, 2);
        let twins = vec![a.clone(), TrialSeries { id: 11, ..a.clone() }];
        let dm = pairwise_dtw(&twins, &DtwOptions::default()).unwrap();
        assert!(dm.data().iter().all(|&d| d == 0.0));

        let trials: Vec<_> = (0..7).map(|i| random_series(&mut rng, i, 5 + i, 3)).collect();
        let par = pairwise_dtw(&trials, &DtwOptions::default()).unwrap();
        let ser = pairwise_dtw_serial(&trials, &DtwOptions::default()).unwrap();
        assert_eq!(par, ser);
        assert_eq!(par, par.transpose());
        assert_eq!(par.ids(), &[0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn pairwise_needs_two_trials() {
        let t = TrialSeries::new(0, 1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(pairwise_dtw(&[t], &DtwOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn znormalization_removes_gain_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_series(&mut rng, 0, 10, 2);
        let scaled = TrialSeries::new(1, 2, a.data.iter().map(|x| 3.0 * x - 7.0).collect()).unwrap();
        let d = dtw_distance(&a.znormalized(), &scaled.znormalized(), None).unwrap();
        assert!(d < 1e-9);
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_non_negative(
            seed in 0u64..10_000, la in 1usize..10, lb in 1usize..10, ch in 1usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_series(&mut rng, 0, la, ch);
            let b = random_series(&mut rng, 1, lb, ch);
            let ab = dtw_distance(&a, &b, None).unwrap();
            let ba = dtw_distance(&b, &a, None).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}
