use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{GradientRecord, Gradients, ParamGroup, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter group.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
    /// Number of updates applied so far.
    pub t: u64,
}

/// One bias-corrected Adam update of `group` at step `t` (1-based).
///
/// Frozen groups are left untouched.
pub fn adam_step<T: Scalar>(
    group: &mut ParamGroup<T>,
    record: &GradientRecord<T>,
    state: &mut AdamState<T>,
    hyper: &AdamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::config("adam step index starts at 1"));
    }
    if record.grads.len() != group.len() {
        return Err(Error::dim(format!(
            "{} gradients for {} tensors in group {}",
            record.grads.len(),
            group.len(),
            group.name
        )));
    }
    for (i, g) in record.grads.iter().enumerate() {
        if let Some(g) = g {
            if g.shape() != group.tensor(i).shape() {
                return Err(Error::dim(format!(
                    "gradient {:?} vs parameter {}.{} {:?}",
                    g.shape(),
                    group.name,
                    group.names()[i],
                    group.tensor(i).shape()
                )));
            }
        }
    }
    if !group.trainable {
        return Ok(());
    }
    state.m.resize(group.len(), None);
    state.v.resize(group.len(), None);
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let c1 = T::one() - b1.powi(t as i32);
    let c2 = T::one() - b2.powi(t as i32);
    let (rate, eps) = (T::of(hyper.rate), T::of(hyper.eps));
    for (i, g) in record.grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let m = state.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
        let p = group.tensor_mut(i);
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p = *p - rate * mhat / (vhat.sqrt() + eps);
        }
    }
    state.t = t;
    Ok(())
}

/// Adam optimizer keeping a separate step counter per parameter group.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    states: BTreeMap<usize, AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, states: BTreeMap::new() }
    }

    /// Applies one update to every trainable group present in `grads`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        for record in &grads.records {
            let state = self.states.entry(record.group).or_default();
            let t = state.t + 1;
            adam_step(store.group_mut(record.group), record, state, &self.config, t)?;
        }
        Ok(())
    }
}
