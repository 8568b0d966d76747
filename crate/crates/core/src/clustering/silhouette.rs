use serde::{Deserialize, Serialize};

use super::dtw::DistanceMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-point silhouette components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteTerms<T> {
    /// Mean distance to the other members of the point's own cluster.
    pub a: Vec<T>,
    /// Smallest mean distance to the members of another cluster.
    pub b: Vec<T>,
    pub d: Vec<T>,
}

/// Mean silhouette `(b - a) / max(a, b)` over all points; singletons score 0.
///
/// Labels need not be contiguous; the number of distinct labels must be at least 2.
pub fn silhouette_mean<T: Scalar>(dm: &DistanceMatrix<T>, labels: &[usize]) -> Result<(T, SilhouetteTerms<T>)> {
    let n = dm.len();
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for {n} points", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let clusters = sizes.iter().filter(|&&s| s > 0).count();
    if clusters < 2 {
        return Err(Error::config(format!("silhouette needs at least 2 clusters, got {clusters}")));
    }

    let mut terms = SilhouetteTerms { a: Vec::with_capacity(n), b: Vec::with_capacity(n), d: Vec::with_capacity(n) };
    let mut sums = vec![T::zero(); k];
    for i in 0..n {
        sums.fill(T::zero());
        for j in 0..n {
            sums[labels[j]] = sums[labels[j]] + dm.get(i, j);
        }
        let own = labels[i];
        let a = if sizes[own] > 1 { sums[own] / T::of_usize(sizes[own] - 1) } else { T::zero() };
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / T::of_usize(sizes[c]))
            .fold(T::infinity(), T::min);
        let top = a.max(b);
        let d = if sizes[own] == 1 || top == T::zero() { T::zero() } else { (b - a) / top };
        terms.a.push(a);
        terms.b.push(b);
        terms.d.push(d);
    }
    let mean = terms.d.iter().copied().sum::<T>() / T::of_usize(n);
    Ok((mean, terms))
}
