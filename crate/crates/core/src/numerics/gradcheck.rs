use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Largest tensor extent accepted by [`grad_check`].
pub const MAX_CHECK_EXTENT: usize = 8;

/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding compare by absolute difference.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares tape gradients against central finite differences for every
/// trainable parameter tensor in `store`.
///
/// `build` records the forward pass and returns the scalar loss; it must be
/// deterministic.
pub fn grad_check<T, F>(store: &ParamStore<T>, build: F, tolerance: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<'_, T>) -> Result<NodeId>,
{
    for id in store.ids() {
        if store.get(id).shape().iter().any(|&d| d > MAX_CHECK_EXTENT) {
            return Err(Error::config(format!(
                "{} has shape {:?}; gradient checks need extents <= {MAX_CHECK_EXTENT}",
                store.label(id),
                store.get(id).shape()
            )));
        }
    }
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = build(&mut g)?;
        Ok(g.value(loss).item().as_f64())
    };

    let mut entries = Vec::new();
    let mut work = store.clone();
    for id in store.ids().filter(|&id| store.is_trainable(id)) {
        let name = store.label(id);
        let n = store.get(id).len();
        let grad = analytic.get(id).map(|t| t.data().to_vec());
        let mut worst = 0.0f64;
        let mut finite = true;
        for i in 0..n {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + T::of(FD_STEP);
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - T::of(FD_STEP);
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.as_ref().map(|g| g[i].as_f64()).unwrap_or(0.0);
            if !a.is_finite() || !numeric.is_finite() {
                finite = false;
                break;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        let max_rel_error = if finite { worst } else { f64::INFINITY };
        entries.push(ParamCheck { name, max_rel_error, passed: finite && max_rel_error < tolerance });
    }
    Ok(GradCheckReport { tolerance, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_layer_passes_tightly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let w = store.add("lin", "w", rand_tensor(&mut rng, &[4, 3])).unwrap();
        let b = store.add("lin", "b", rand_tensor(&mut rng, &[3])).unwrap();
        let x = rand_tensor(&mut rng, &[5, 4]);
        let target = rand_tensor(&mut rng, &[5, 3]);
        let report = grad_check(
            &store,
            |g| {
                let xn = g.constant(x.clone());
                let tn = g.constant(target.clone());
                let (wn, bn) = (g.param(w), g.param(b));
                let y = g.affine(xn, wn, bn)?;
                g.mse(y, tn)
            },
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let a = store.add("p", "a", rand_tensor(&mut rng, &[3, 4])).unwrap();
        let b = store.add("p", "b", rand_tensor(&mut rng, &[4, 4])).unwrap();
        let r = store.add("p", "r", rand_tensor(&mut rng, &[4])).unwrap();
        let report = grad_check(
            &store,
            |g| {
                let (an, bn, rn) = (g.param(a), g.param(b), g.param(r));
                let ab = g.matmul(an, bn)?;
                let s = g.sigmoid(ab);
                let t = g.tanh(an);
                let st = g.mul(s, t)?;
                let d = g.sub(st, ab)?;
                let d = g.add_row(d, rn)?;
                let left = g.slice_cols(d, 0, 2)?;
                let right = g.slice_cols(d, 2, 2)?;
                let swapped = g.concat_cols(&[right, left])?;
                let stacked = g.concat_rows(&[swapped, d])?;
                let picked = g.gather_rows(stacked, &[0, 4, 4, 2])?;
                let tr = g.transpose(picked);
                let sc = g.scale(tr, 0.7);
                let rs = g.reshape(sc, vec![2, 8])?;
                let p = g.softmax_rows(rs)?;
                let ce = g.cross_entropy(p, &[3, 6])?;
                let m = g.mean(picked);
                let mse = g.mse(s, t)?;
                g.weighted_sum(&[(1.0, ce), (0.5, m), (-0.3, mse)])
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn oversized_tensors_are_rejected() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("p", "w", Tensor::zeros(&[9, 2])).unwrap();
        let res = grad_check(
            &store,
            |g| {
                let n = g.param(w);
                Ok(g.sum(n))
            },
            1e-4,
        );
        assert!(matches!(res, Err(Error::Config(_))));
    }
}
