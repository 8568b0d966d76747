//! Technique labels from DTW k-medoids clustering of trial kinematics.

mod dtw;
mod kmedoids;
mod select;
mod silhouette;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dtw::{dtw_distance, pairwise_dtw, pairwise_dtw_serial, DistanceMatrix, DtwOptions, TrialSeries};
pub use kmedoids::{cluster, cluster_warm, inertia, ClusterAssignment, MAX_ROUNDS};
pub use select::{select_k, select_k_matrix, KCurvePoint, KSelection};
pub use silhouette::{silhouette_mean, SilhouetteTerms};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default number of seeded initializations per k.
pub const DEFAULT_RESTARTS: usize = 10;

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n as u64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// One row of the technique-label file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TechniqueLabel {
    pub trial_id: usize,
    pub label: usize,
    pub k: usize,
    pub silhouette: f64,
    pub inertia: f64,
}

pub fn technique_labels<T: Scalar>(dm: &DistanceMatrix<T>, a: &ClusterAssignment<T>) -> Vec<TechniqueLabel> {
    dm.ids()
        .iter()
        .zip(&a.labels)
        .map(|(&trial_id, &label)| TechniqueLabel {
            trial_id,
            label,
            k: a.k,
            silhouette: a.silhouette.map_or(0.0, Scalar::as_f64),
            inertia: a.inertia.as_f64(),
        })
        .collect()
}

/// Writes labels as CSV with header `trial_id,label,k,silhouette,inertia`.
pub fn write_labels(path: &Path, labels: &[TechniqueLabel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for l in labels {
        w.serialize(l).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<TechniqueLabel>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row.map_err(|e| csv_error(path, e))?);
    }
    if out.is_empty() {
        return Err(Error::Parse { path: path.into(), line: 1, msg: "no label records".into() });
    }
    Ok(out)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse { path: path.into(), line, msg: format!("{kind:?}") },
    }
}
