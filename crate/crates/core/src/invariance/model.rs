use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::groups::*;
use super::{LossWeights, ModelConfig, VariantKind};
use crate::dataset::{window_indices, MultiStreamTrial, WindowMode};
use crate::encoders::{encode_stream, uniform, zero_state, AttentionParams, LstmParams, StreamEncoder, StreamTag};
use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId};
use crate::{Graph, ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "tsinv-model";

/// Fully connected layer `x·W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    fn init(store: &mut ParamStore, group: &str, prefix: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let w = store.add(group, &format!("{prefix}.w"), uniform(rng, &[input, output], bound))?;
        let b = store.add(group, &format!("{prefix}.b"), Tensor::zeros(&[output]))?;
        Ok(Self { input, output, w, b })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        if g.value(x).cols() != self.input {
            return Err(Error::dim(format!("layer expects {} inputs, got {:?}", self.input, g.value(x).shape())));
        }
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.affine(x, w, b)
    }
}

/// Window decoder: a forward LSTM (plus a backward one in non-causal mode) and a softmax layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub forward: LstmParams,
    pub backward: Option<LstmParams>,
    pub out: Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parts {
    pub vis: StreamEncoder,
    pub kin: StreamEncoder,
    pub evt: StreamEncoder,
    pub e1: Option<Dense>,
    pub e2: Option<Dense>,
    pub estimator: Estimator,
    pub reconstructor: Option<Dense>,
    pub f1: Option<Dense>,
    pub f2: Option<Dense>,
    pub discriminator: Option<Dense>,
}

/// Parameters and wiring of one model variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub variant: VariantKind,
    pub weights: LossWeights,
    pub store: ParamStore,
    pub parts: Parts,
}

/// Values recorded by one forward pass over a trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// Frames the estimator was evaluated at.
    pub frames: Vec<usize>,
    /// `frames×|H|` features of the whole trial.
    pub h: NodeId,
    /// Features at the evaluated frames.
    pub h_at: NodeId,
    pub e1: Option<NodeId>,
    pub e2: Option<NodeId>,
    pub e1_at: Option<NodeId>,
    pub e2_at: Option<NodeId>,
    /// `frames.len()×states` state probabilities.
    pub probs: NodeId,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: Model,
}

impl Model {
    /// Allocates the parameters `kind` needs, initialized from `config.seed`.
    pub fn new(config: ModelConfig, kind: VariantKind, weights: LossWeights) -> Result<Self> {
        config.validate(kind)?;
        weights.validate()?;
        let weights = weights.for_variant(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let c = &config;
        let vis = StreamEncoder {
            tag: StreamTag::Vis,
            lstm: LstmParams::init(&mut store, FEATURES, "vis.lstm", c.vis_channels, c.vis_hidden, &mut rng)?,
            attention: None,
        };
        let mut attended = |store: &mut ParamStore, tag: StreamTag, name: &str, ch: usize, hid: usize| -> Result<StreamEncoder> {
            Ok(StreamEncoder {
                tag,
                lstm: LstmParams::init(store, FEATURES, &format!("{name}.lstm"), ch, hid, &mut rng)?,
                attention: Some(AttentionParams::init(
                    store,
                    FEATURES,
                    &format!("{name}.att"),
                    ch,
                    c.t_obs,
                    hid,
                    c.attention_dim,
                    &mut rng,
                )?),
            })
        };
        let kin = attended(&mut store, StreamTag::Kin, "kin", c.kin_channels, c.kin_hidden)?;
        let evt = attended(&mut store, StreamTag::Evt, "evt", c.evt_channels, c.evt_hidden)?;

        let h = c.feature_size();
        let l = c.latent;
        let adversarial = kind.is_adversarial();
        let (e1, e2) = if adversarial {
            (
                Some(Dense::init(&mut store, ENCODER, "e1", h, l, &mut rng)?),
                Some(Dense::init(&mut store, ENCODER, "e2", h, l, &mut rng)?),
            )
        } else {
            (None, None)
        };
        let m_in = if adversarial { l } else { h };
        let mh = c.estimator_hidden;
        let forward = LstmParams::init(&mut store, ESTIMATOR, "fwd", m_in, mh, &mut rng)?;
        let backward = match c.mode {
            WindowMode::Causal => None,
            WindowMode::Noncausal => Some(LstmParams::init(&mut store, ESTIMATOR, "bwd", m_in, mh, &mut rng)?),
        };
        let out_in = if backward.is_some() { 2 * mh } else { mh };
        let out = Dense::init(&mut store, ESTIMATOR, "out", out_in, c.states, &mut rng)?;

        let mut optional = |on: bool, group: &str, name: &str, input: usize, output: usize| -> Result<Option<Dense>> {
            if on { Dense::init(&mut store, group, name, input, output, &mut rng).map(Some) } else { Ok(None) }
        };
        let reconstructor = optional(adversarial, RECONSTRUCTOR, "r", 2 * l, h)?;
        let f1 = optional(adversarial, F1, "f1", l, l)?;
        let f2 = optional(adversarial, F2, "f2", l, l)?;
        let discriminator = optional(kind == VariantKind::Full, DISCRIMINATOR, "d", l, c.techniques)?;

        let parts = Parts {
            vis,
            kin,
            evt,
            e1,
            e2,
            estimator: Estimator { forward, backward, out },
            reconstructor,
            f1,
            f2,
            discriminator,
        };
        Ok(Self { config, variant: kind, weights, store, parts })
    }

    /// Names of the parameter groups this model holds.
    pub fn group_names(&self) -> Vec<&str> {
        self.store.groups().iter().map(|g| g.name.as_str()).collect()
    }

    /// Checks that a trial matches the model's stream sizes and state count.
    pub fn check_trial(&self, trial: &MultiStreamTrial) -> Result<()> {
        let c = &self.config;
        if trial.states != c.states {
            return Err(Error::config(format!(
                "trial {} has {} states, model expects {}",
                trial.id, trial.states, c.states
            )));
        }
        let got = (trial.vis.cols(), trial.kin.cols(), trial.evt.cols());
        let want = (c.vis_channels, c.kin_channels, c.evt_channels);
        if got != want {
            return Err(Error::dim(format!(
                "trial {} stream sizes (vis, kin, evt) {got:?}, model expects {want:?}",
                trial.id
            )));
        }
        Ok(())
    }

    /// Fused per-frame features `[h_vis, h_kin, h_evt]` of a whole trial.
    pub fn features(&self, g: &mut Graph<'_>, trial: &MultiStreamTrial) -> Result<NodeId> {
        self.check_trial(trial)?;
        let mut streams = Vec::with_capacity(3);
        for (frames, enc) in [(&trial.vis, &self.parts.vis), (&trial.kin, &self.parts.kin), (&trial.evt, &self.parts.evt)] {
            let states = encode_stream(g, frames, enc)?;
            let hs: Vec<NodeId> = states.iter().map(|s| s.h).collect();
            streams.push(g.concat_rows(&hs)?);
        }
        g.concat_cols(&streams)
    }

    /// `[e1, e2]`, each an affine map of `H` followed by tanh.
    pub fn encode_split(&self, g: &mut Graph<'_>, h: NodeId) -> Result<(NodeId, NodeId)> {
        let (Some(d1), Some(d2)) = (&self.parts.e1, &self.parts.e2) else {
            return Err(Error::Variant(format!("{} variant has no encoder split", self.variant)));
        };
        let a1 = d1.apply(g, h)?;
        let a2 = d2.apply(g, h)?;
        Ok((g.tanh(a1), g.tanh(a2)))
    }

    /// State probabilities from a window given as `t_obs` step inputs (each `rows×input`), oldest first.
    pub fn estimate_window(&self, g: &mut Graph<'_>, steps: &[NodeId]) -> Result<NodeId> {
        let t_obs = self.config.t_obs;
        if steps.len() != t_obs {
            return Err(Error::dim(format!("window of {} frames, estimator expects {t_obs}", steps.len())));
        }
        let est = &self.parts.estimator;
        let rows = g.value(steps[0]).rows();
        let run = |g: &mut Graph<'_>, p: &LstmParams, order: &mut dyn Iterator<Item = &NodeId>| -> Result<NodeId> {
            let mut state = zero_state(g, rows, p.hidden, StreamTag::Kin);
            for &x in order {
                state = crate::encoders::lstm_step(g, x, &state, p)?;
            }
            Ok(state.h)
        };
        let summary = match (&est.backward, self.config.mode) {
            (Some(bwd), WindowMode::Noncausal) => {
                let centre = t_obs / 2;
                let past = run(g, &est.forward, &mut steps[..=centre].iter())?;
                let future = run(g, bwd, &mut steps[centre..].iter().rev())?;
                g.concat_cols(&[past, future])?
            }
            _ => run(g, &est.forward, &mut steps.iter())?,
        };
        let logits = est.out.apply(g, summary)?;
        g.softmax_rows(logits)
    }

    /// State probabilities at `frames`, reading windows of the rows of `source` (`T×input`).
    pub fn estimate_state(&self, g: &mut Graph<'_>, source: NodeId, frames: &[usize]) -> Result<NodeId> {
        let len = g.value(source).rows();
        if frames.is_empty() {
            return Err(Error::data("no frames to estimate"));
        }
        if let Some(&t) = frames.iter().find(|&&t| t >= len) {
            return Err(Error::dim(format!("frame {t} outside {len} frames")));
        }
        let t_obs = self.config.t_obs;
        let windows: Vec<Vec<usize>> =
            frames.iter().map(|&t| window_indices(len, t, t_obs, self.config.mode)).collect();
        let mut steps = Vec::with_capacity(t_obs);
        for k in 0..t_obs {
            let rows: Vec<usize> = windows.iter().map(|w| w[k]).collect();
            steps.push(g.gather_rows(source, &rows)?);
        }
        self.estimate_window(g, &steps)
    }

    /// `Ĥ = R([e2, ψ(e1)])`, where `e1_corrupted` already carries the dropout.
    pub fn reconstruct(&self, g: &mut Graph<'_>, e1_corrupted: NodeId, e2: NodeId) -> Result<NodeId> {
        let r = self.require(&self.parts.reconstructor, "reconstructor")?;
        let joined = g.concat_cols(&[e2, e1_corrupted])?;
        r.apply(g, joined)
    }

    /// `f1(e1)` predicting `e2`.
    pub fn predict_e2(&self, g: &mut Graph<'_>, e1: NodeId) -> Result<NodeId> {
        self.require(&self.parts.f1, "disentangler f1")?.apply(g, e1)
    }

    /// `f2(e2)` predicting `e1`.
    pub fn predict_e1(&self, g: &mut Graph<'_>, e2: NodeId) -> Result<NodeId> {
        self.require(&self.parts.f2, "disentangler f2")?.apply(g, e2)
    }

    /// Technique probabilities from `e1`.
    pub fn discriminate(&self, g: &mut Graph<'_>, e1: NodeId) -> Result<NodeId> {
        let logits = self.require(&self.parts.discriminator, "discriminator")?.apply(g, e1)?;
        g.softmax_rows(logits)
    }

    fn require<'a>(&self, part: &'a Option<Dense>, name: &str) -> Result<&'a Dense> {
        part.as_ref().ok_or_else(|| Error::Variant(format!("{} variant has no {name}", self.variant)))
    }

    /// Features, codes and state probabilities at `frames` of one trial.
    pub fn forward(&self, g: &mut Graph<'_>, trial: &MultiStreamTrial, frames: &[usize]) -> Result<Forward> {
        let h = self.features(g, trial)?;
        let h_at = g.gather_rows(h, frames)?;
        if self.variant.is_adversarial() {
            let (e1, e2) = self.encode_split(g, h)?;
            let probs = self.estimate_state(g, e1, frames)?;
            let e1_at = g.gather_rows(e1, frames)?;
            let e2_at = g.gather_rows(e2, frames)?;
            Ok(Forward {
                frames: frames.to_vec(),
                h,
                h_at,
                e1: Some(e1),
                e2: Some(e2),
                e1_at: Some(e1_at),
                e2_at: Some(e2_at),
                probs,
            })
        } else {
            let probs = self.estimate_state(g, h, frames)?;
            Ok(Forward { frames: frames.to_vec(), h, h_at, e1: None, e2: None, e1_at: None, e2_at: None, probs })
        }
    }

    /// Evaluation pass over every frame with all groups frozen.
    fn inference<R>(&self, trial: &MultiStreamTrial, read: impl FnOnce(&Graph<'_>, &Forward) -> R) -> Result<R> {
        let mut frozen = self.store.clone();
        frozen.set_all_trainable(false);
        let mut g = Graph::new(&frozen);
        let frames: Vec<usize> = (0..trial.len()).collect();
        let fw = self.forward(&mut g, trial, &frames)?;
        Ok(read(&g, &fw))
    }

    /// `frames×states` probabilities for every frame.
    pub fn predict_proba(&self, trial: &MultiStreamTrial) -> Result<Tensor> {
        self.inference(trial, |g, fw| g.value(fw.probs).clone())
    }

    /// Argmax state for every frame; the lowest index wins ties.
    pub fn predict(&self, trial: &MultiStreamTrial) -> Result<Vec<usize>> {
        let p = self.predict_proba(trial)?;
        Ok((0..p.rows())
            .map(|r| {
                let row = p.row(r);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }

    /// Features `H` for every frame.
    pub fn feature_values(&self, trial: &MultiStreamTrial) -> Result<Tensor> {
        self.inference(trial, |g, fw| g.value(fw.h).clone())
    }

    /// `(e1, e2)` for every frame.
    pub fn codes(&self, trial: &MultiStreamTrial) -> Result<(Tensor, Tensor)> {
        if !self.variant.is_adversarial() {
            return Err(Error::Variant(format!("{} variant has no encoder split", self.variant)));
        }
        self.inference(trial, |g, fw| {
            (g.value(fw.e1.expect("split present")).clone(), g.value(fw.e2.expect("split present")).clone())
        })
    }

    /// Writes a versioned JSON checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model: self.clone() };
        let mut text = serde_json::to_string_pretty(&ck).map_err(|e| Error::config(format!("checkpoint encoding: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse = |e: serde_json::Error| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(parse)?;
        if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Parse { path: path.into(), line: 1, msg: "not a model checkpoint".into() });
        }
        let version = value.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(Error::Version {
                path: path.into(),
                expected: CHECKPOINT_VERSION.to_string(),
                found: version.map_or_else(|| "none".into(), |v| v.to_string()),
            });
        }
        let ck: Checkpoint = serde_json::from_str(&text).map_err(parse)?;
        ck.model.config.validate(ck.model.variant)?;
        Ok(ck.model)
    }
}
