use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::dataset::MultiStreamTrial;
use crate::clustering::csv_error;
use crate::error::{Error, Result};

/// Mean codes over one state instance (a maximal run of a constant state label).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub trial_id: usize,
    pub state: usize,
    pub start: usize,
    pub end: usize,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

fn run_mean(m: &crate::Tensor, start: usize, end: usize) -> Vec<f64> {
    let n = (end - start) as f64;
    (0..m.cols()).map(|c| (start..end).map(|t| m.row(t)[c]).sum::<f64>() / n).collect()
}

/// One record per state instance of every trial, in trial then time order.
pub fn export_embeddings(model: &Model, trials: &[MultiStreamTrial]) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for trial in trials {
        let (e1, e2) = model.codes(trial)?;
        for (state, start, end) in trial.state_runs() {
            out.push(EmbeddingRecord {
                trial_id: trial.id,
                state,
                start,
                end,
                e1: run_mean(&e1, start, end),
                e2: run_mean(&e2, start, end),
            });
        }
    }
    Ok(out)
}

/// Writes records as CSV: `trial_id,state,start,end`, then `e1_*` and `e2_*` columns
/// with values rounded to 6 significant digits.
pub fn write_embeddings(path: &std::path::Path, records: &[EmbeddingRecord]) -> Result<()> {
    let (l1, l2) = records.first().map_or((0, 0), |r| (r.e1.len(), r.e2.len()));
    if records.iter().any(|r| r.e1.len() != l1 || r.e2.len() != l2) {
        return Err(Error::dim("embedding records differ in width"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = ["trial_id", "state", "start", "end"].map(String::from).to_vec();
    header.extend((0..l1).map(|i| format!("e1_{i}")));
    header.extend((0..l2).map(|i| format!("e2_{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in records {
        let mut row = vec![r.trial_id.to_string(), r.state.to_string(), r.start.to_string(), r.end.to_string()];
        row.extend(r.e1.iter().chain(&r.e2).map(|&x| crate::harness::round_sig(x).to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
