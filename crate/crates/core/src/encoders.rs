//! Stream encoders: LSTM cells, channel attention over an observation window,
//! and fusion of the per-stream hidden states into one feature vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamTag {
    Vis,
    Kin,
    Evt,
}

/// Handles to one LSTM cell's parameters.
///
/// `wx` is `input×4h`, `wh` is `h×4h` and `b` has length `4h`; the four
/// column blocks hold the input, forget, candidate and output gates in that
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmParams {
    /// Registers a freshly initialised cell in `group`, names prefixed by `prefix`.
    ///
    /// Weights are uniform in `±1/√h`; the forget-gate bias starts at 1.
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::config(format!("lstm {prefix} needs positive sizes")));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = store.add(group, &format!("{prefix}.wx"), uniform(rng, &[input, 4 * hidden], bound))?;
        let wh = store.add(group, &format!("{prefix}.wh"), uniform(rng, &[hidden, 4 * hidden], bound))?;
        let mut bias = vec![T::zero(); 4 * hidden];
        for b in &mut bias[hidden..2 * hidden] {
            *b = T::one();
        }
        let b = store.add(group, &format!("{prefix}.b"), Tensor::vector(bias))?;
        Ok(Self { input, hidden, wx, wh, b })
    }

    pub fn param_count(&self) -> usize {
        4 * (self.input + self.hidden + 1) * self.hidden
    }
}

/// Recurrent state of one stream encoder; `h` and `c` are `rows×hidden`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamState {
    pub h: NodeId,
    pub c: NodeId,
    pub tag: StreamTag,
}

pub fn zero_state<T: Scalar>(g: &mut Graph<'_, T>, rows: usize, hidden: usize, tag: StreamTag) -> StreamState {
    let h = g.constant(Tensor::zeros(&[rows, hidden]));
    let c = g.constant(Tensor::zeros(&[rows, hidden]));
    StreamState { h, c, tag }
}

/// One LSTM update for a batch of rows.
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    state: &StreamState,
    p: &LstmParams,
) -> Result<StreamState> {
    if g.value(x).cols() != p.input {
        return Err(Error::dim(format!(
            "lstm input {:?} does not match input size {}",
            g.value(x).shape(),
            p.input
        )));
    }
    if g.value(state.h).cols() != p.hidden || g.value(state.c).cols() != p.hidden {
        return Err(Error::dim(format!("lstm state does not match hidden size {}", p.hidden)));
    }
    let h = p.hidden;
    let (wx, wh, b) = (g.param(p.wx), g.param(p.wh), g.param(p.b));
    let xw = g.matmul(x, wx)?;
    let hw = g.matmul(state.h, wh)?;
    let pre = g.add(xw, hw)?;
    let pre = g.add_row(pre, b)?;
    let i = g.slice_cols(pre, 0, h)?;
    let f = g.slice_cols(pre, h, h)?;
    let cand = g.slice_cols(pre, 2 * h, h)?;
    let o = g.slice_cols(pre, 3 * h, h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h_new = g.mul(o, tc)?;
    Ok(StreamState { h: h_new, c, tag: state.tag })
}

/// Handles to the channel-attention parameters.
///
/// A channel's score is `uᵀ tanh(W·[h; c] + Vᵀ·x_window)`, where `x_window`
/// is that channel's last `window` samples; `w` is `2h×dim`, `v` is
/// `window×dim` and `u` is `dim×1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub channels: usize,
    pub window: usize,
    pub dim: usize,
    pub hidden: usize,
    pub u: ParamId,
    pub w: ParamId,
    pub v: ParamId,
}

impl AttentionParams {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        group: &str,
        prefix: &str,
        channels: usize,
        window: usize,
        hidden: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 || window == 0 || dim == 0 {
            return Err(Error::config(format!("attention {prefix} needs positive sizes")));
        }
        let u = store.add(group, &format!("{prefix}.u"), uniform(rng, &[dim, 1], 1.0 / (dim as f64).sqrt()))?;
        let w = store.add(
            group,
            &format!("{prefix}.w"),
            uniform(rng, &[2 * hidden, dim], 1.0 / ((2 * hidden) as f64).sqrt()),
        )?;
        let v = store.add(group, &format!("{prefix}.v"), uniform(rng, &[window, dim], 1.0 / (window as f64).sqrt()))?;
        Ok(Self { channels, window, dim, hidden, u, w, v })
    }
}

/// Observation window ending at frame `t` as a `channels×window` constant,
/// the first frame repeated where the window reaches before the trial start.
pub fn window_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    frames: &Tensor<T>,
    t: usize,
    window: usize,
) -> Result<NodeId> {
    let (len, ch) = frames.dims2();
    if len == 0 || window == 0 {
        return Err(Error::Domain("attention over an empty window".into()));
    }
    if t >= len {
        return Err(Error::dim(format!("frame {t} outside {len} frames")));
    }
    let mut data = vec![T::zero(); ch * window];
    for k in 0..window {
        let src = (t + k + 1).saturating_sub(window);
        let row = frames.row(src);
        for c in 0..ch {
            data[c * window + k] = row[c];
        }
    }
    Ok(g.constant(Tensor::matrix(ch, window, data)?))
}

/// Channel weights `α_t` (a `1×channels` probability row) for one frame.
pub fn attention_weights<T: Scalar>(
    g: &mut Graph<'_, T>,
    window: NodeId,
    state: &StreamState,
    p: &AttentionParams,
) -> Result<NodeId> {
    let (ch, len) = g.value(window).dims2();
    if ch != p.channels || len != p.window {
        return Err(Error::dim(format!(
            "attention window {:?} vs {} channels × {} frames",
            g.value(window).shape(),
            p.channels,
            p.window
        )));
    }
    let (u, w, v) = (g.param(p.u), g.param(p.w), g.param(p.v));
    let hc = g.concat_cols(&[state.h, state.c])?;
    let recur = g.matmul(hc, w)?;
    let proj = g.matmul(window, v)?;
    let pre = g.add_row(proj, recur)?;
    let act = g.tanh(pre);
    let scores = g.matmul(act, u)?;
    let row = g.transpose(scores);
    g.softmax_rows(row)
}

/// A stream's recurrent encoder, with channel attention for kinematics and events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamEncoder {
    pub tag: StreamTag,
    pub lstm: LstmParams,
    pub attention: Option<AttentionParams>,
}

/// Runs `enc` causally over `frames` (`T×channels`) from a zero state and
/// returns one state per frame.
pub fn encode_stream<T: Scalar>(
    g: &mut Graph<'_, T>,
    frames: &Tensor<T>,
    enc: &StreamEncoder,
) -> Result<Vec<StreamState>> {
    let (len, ch) = frames.dims2();
    if frames.is_empty() || len == 0 {
        return Err(Error::data(format!("{:?} stream has no frames", enc.tag)));
    }
    if ch != enc.lstm.input {
        return Err(Error::dim(format!(
            "{:?} stream has {ch} channels, encoder expects {}",
            enc.tag, enc.lstm.input
        )));
    }
    if let Some(t) = (0..len).find(|&t| frames.row(t).iter().any(|x| !x.is_finite())) {
        return Err(Error::data(format!("{:?} stream frame {t} is not finite", enc.tag)));
    }
    let mut state = zero_state(g, 1, enc.lstm.hidden, enc.tag);
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let x = g.constant(Tensor::matrix(1, ch, frames.row(t).to_vec())?);
        let input = match &enc.attention {
            Some(att) => {
                let win = window_node(g, frames, t, att.window)?;
                let alpha = attention_weights(g, win, &state, att)?;
                g.mul(alpha, x)?
            }
            None => x,
        };
        state = lstm_step(g, input, &state, &enc.lstm)?;
        out.push(state);
    }
    Ok(out)
}

/// Per-frame concatenation `H = [h_vis, h_kin, h_evt]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle<T> {
    pub h_vis: Vec<T>,
    pub h_kin: Vec<T>,
    pub h_evt: Vec<T>,
    pub h: Vec<T>,
}

impl<T: Scalar> FeatureBundle<T> {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Concatenates the three stream features, checking each against its configured size.
pub fn fuse<T: Scalar>(
    h_vis: &[T],
    h_kin: &[T],
    h_evt: &[T],
    sizes: (usize, usize, usize),
) -> Result<FeatureBundle<T>> {
    let got = (h_vis.len(), h_kin.len(), h_evt.len());
    if got != sizes {
        return Err(Error::dim(format!("feature sizes {got:?}, expected {sizes:?}")));
    }
    let h = h_vis.iter().chain(h_kin).chain(h_evt).copied().collect();
    Ok(FeatureBundle { h_vis: h_vis.to_vec(), h_kin: h_kin.to_vec(), h_evt: h_evt.to_vec(), h })
}

pub(crate) fn uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
