use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{Forward, Model};
use super::VariantKind;
use crate::error::{Error, Result};
use crate::numerics::NodeId;
use crate::{Graph, Tensor};

/// Keep-mask for dropout without rescaling: each entry is 0 with probability `rate`, else 1.
pub fn dropout_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let data = (0..rows * cols).map(|_| if rate > 0.0 && rng.random::<f64>() < rate { 0.0 } else { 1.0 }).collect();
    Tensor::matrix(rows, cols, data)
}

/// Unweighted sub-loss nodes of one forward pass; absent terms are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossNodes {
    pub state: NodeId,
    pub recon: Option<NodeId>,
    pub f1: Option<NodeId>,
    pub f2: Option<NodeId>,
    pub disc: Option<NodeId>,
}

/// Sub-loss values and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub state: f64,
    pub recon: f64,
    pub f1: f64,
    pub f2: f64,
    pub disc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.state, self.recon, self.f1, self.f2, self.disc, self.total].iter().all(|x| x.is_finite())
    }

    pub(crate) fn accumulate(&mut self, other: &Self, scale: f64) {
        self.state += scale * other.state;
        self.recon += scale * other.recon;
        self.f1 += scale * other.f1;
        self.f2 += scale * other.f2;
        self.disc += scale * other.disc;
        self.total += scale * other.total;
    }
}

fn value(g: &Graph<'_>, n: Option<NodeId>) -> f64 {
    n.map_or(0.0, |n| g.value(n).item())
}

impl Model {
    /// Builds every sub-loss the variant has at the forward pass's frames.
    ///
    /// `labels` are the states at `fw.frames`; `technique` is the trial's
    /// technique label (required by the full variant); `mask` is the dropout
    /// keep-mask for `e1` (`None` means no dropout). The reconstruction target
    /// is the detached feature vector.
    pub fn loss_nodes(
        &self,
        g: &mut Graph<'_>,
        fw: &Forward,
        labels: &[usize],
        technique: Option<usize>,
        mask: Option<&Tensor>,
    ) -> Result<LossNodes> {
        if labels.len() != fw.frames.len() {
            return Err(Error::data(format!("{} state labels for {} frames", labels.len(), fw.frames.len())));
        }
        let state = g.cross_entropy(fw.probs, labels)?;
        let mut nodes = LossNodes { state, recon: None, f1: None, f2: None, disc: None };
        let (Some(e1), Some(e2)) = (fw.e1_at, fw.e2_at) else {
            return Ok(nodes);
        };
        let corrupted = match mask {
            Some(m) => {
                let m = g.constant(m.clone());
                g.mul(e1, m)?
            }
            None => e1,
        };
        let target = g.detach(fw.h_at);
        let rebuilt = self.reconstruct(g, corrupted, e2)?;
        nodes.recon = Some(g.mse(rebuilt, target)?);
        let (f1, f2, disc) = self.adversary_nodes(g, e1, e2, technique)?;
        nodes.f1 = Some(f1);
        nodes.f2 = Some(f2);
        nodes.disc = disc;
        Ok(nodes)
    }

    /// Disentangler losses and, for the full variant, the discriminator loss on given codes.
    pub fn adversary_nodes(
        &self,
        g: &mut Graph<'_>,
        e1: NodeId,
        e2: NodeId,
        technique: Option<usize>,
    ) -> Result<(NodeId, NodeId, Option<NodeId>)> {
        let p2 = self.predict_e2(g, e1)?;
        let f1 = g.mse(p2, e2)?;
        let p1 = self.predict_e1(g, e2)?;
        let f2 = g.mse(p1, e1)?;
        let disc = if self.variant == VariantKind::Full {
            let l = technique.ok_or_else(|| Error::data("full variant needs a technique label"))?;
            if l >= self.config.techniques {
                return Err(Error::data(format!("technique label {l} outside [0, {})", self.config.techniques)));
            }
            let probs = self.discriminate(g, e1)?;
            let rows = g.value(e1).rows();
            Some(g.cross_entropy(probs, &vec![l; rows])?)
        } else {
            None
        };
        Ok((f1, f2, disc))
    }

    fn breakdown(&self, g: &Graph<'_>, n: &LossNodes, total: NodeId) -> LossBreakdown {
        LossBreakdown {
            state: g.value(n.state).item(),
            recon: value(g, n.recon),
            f1: value(g, n.f1),
            f2: value(g, n.f2),
            disc: value(g, n.disc),
            total: g.value(total).item(),
        }
    }

    fn weighted(&self, g: &mut Graph<'_>, n: &LossNodes, adversary_sign: f64, with_disc: bool) -> Result<NodeId> {
        let w = &self.weights;
        let mut terms = vec![(w.alpha, n.state)];
        if let Some(r) = n.recon {
            terms.push((w.beta, r));
        }
        for f in [n.f1, n.f2].into_iter().flatten() {
            terms.push((adversary_sign * w.gamma, f));
        }
        if with_disc {
            if let Some(d) = n.disc {
                terms.push((adversary_sign * w.delta, d));
            }
        }
        g.weighted_sum(&terms)
    }

    /// `α·L_M + β·L_R + γ·(L_f1 + L_f2)`.
    pub fn loss_nuis(&self, g: &mut Graph<'_>, n: &LossNodes) -> Result<(NodeId, LossBreakdown)> {
        let total = self.weighted(g, n, 1.0, false)?;
        let mut b = self.breakdown(g, n, total);
        b.disc = 0.0;
        Ok((total, b))
    }

    /// `loss_nuis + δ·L_D`; only the full variant has a discriminator.
    pub fn loss_full(&self, g: &mut Graph<'_>, n: &LossNodes) -> Result<(NodeId, LossBreakdown)> {
        if self.variant != VariantKind::Full || n.disc.is_none() {
            return Err(Error::Variant(format!("{} variant has no discriminator loss", self.variant)));
        }
        let total = self.weighted(g, n, 1.0, true)?;
        Ok((total, self.breakdown(g, n, total)))
    }

    /// Estimator-phase objective `α·L_M + β·L_R − γ·(L_f1 + L_f2) − δ·L_D`.
    pub fn estimator_objective(&self, g: &mut Graph<'_>, n: &LossNodes) -> Result<(NodeId, LossBreakdown)> {
        let total = self.weighted(g, n, -1.0, true)?;
        Ok((total, self.breakdown(g, n, total)))
    }

    /// Adversary-phase objective `L_f1 + L_f2 (+ L_D)`.
    pub fn adversary_objective(&self, g: &mut Graph<'_>, f1: NodeId, f2: NodeId, disc: Option<NodeId>) -> Result<NodeId> {
        let mut terms = vec![(1.0, f1), (1.0, f2)];
        if let Some(d) = disc {
            terms.push((1.0, d));
        }
        g.weighted_sum(&terms)
    }
}
