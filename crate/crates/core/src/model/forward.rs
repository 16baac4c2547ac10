//! Forward graph of the network.
//!
//! Band-decomposed input `[Cin, T]` goes through parallel dilated
//! convolutions, a 1x1 fusion, and a sigmoid channel gate fed by global
//! average and max pooling. The gated map is cut into overlapping windows
//! whose temporal means are the instances; an attention network scores the
//! instances, top-k gating sparsifies the weights, and the weighted sum is
//! classified. A discriminator sees the outer product of the bag embedding
//! and the class probabilities through a gradient reversal layer.

use super::config::{Aggregator, ModelConfig};
use super::params::{ModelParams, ParamVars};
use crate::autodiff::{PoolMode, PoolSpan, Tape, Var};
use crate::error::{MfamError, Result};
use crate::signal::{frequency_decompose, BandSet};
use crate::tensor::Tensor;

/// Encoder output.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    /// Fused multi-scale map, `[D, T]`.
    pub fused: Var,
    /// Channel weights, `[D]`.
    pub channel_weights: Var,
    /// Gated map, `[D, T]`.
    pub gated: Var,
}

/// Multi-scale encoder with channel attention.
pub fn mscae_forward(
    tape: &mut Tape,
    x: Var,
    p: &ParamVars,
    cfg: &ModelConfig,
) -> Result<EncoderVars> {
    let cin = tape.value(x).shape()[0];
    if tape.value(x).ndim() != 2 || cin != cfg.in_channels {
        return Err(MfamError::shape(format!(
            "expected {} channels, got {}",
            cfg.in_channels, cin
        )));
    }
    let mut branches = Vec::with_capacity(cfg.dilations.len());
    for (i, &dil) in cfg.dilations.iter().enumerate() {
        let c = tape.conv1d(x, p.branch_w[i], p.branch_b[i], dil)?;
        branches.push(tape.relu(c));
    }
    let stacked = tape.concat_rows(&branches)?;
    let fused = tape.conv1d(stacked, p.fuse_w, p.fuse_b, 1)?;

    let avg = tape.pool(fused, PoolMode::Mean, PoolSpan::Global)?;
    let max = tape.pool(fused, PoolMode::Max, PoolSpan::Global)?;
    let avg = channel_mlp(tape, avg, p)?;
    let max = channel_mlp(tape, max, p)?;
    let logits = tape.add(avg, max)?;
    let channel_weights = tape.sigmoid(logits);
    let gated = tape.scale_rows(fused, channel_weights)?;
    Ok(EncoderVars {
        fused,
        channel_weights,
        gated,
    })
}

fn channel_mlp(tape: &mut Tape, v: Var, p: &ParamVars) -> Result<Var> {
    let h = tape.linear(v, p.ca_w1, None)?;
    let h = tape.relu(h);
    tape.linear(h, p.ca_w2, None)
}

/// Frame spans `[start, end)` of the sliding instance windows.
pub fn instance_spans(len: usize, window: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if window == 0 || stride == 0 {
        return Err(MfamError::config("instance window and stride must be positive"));
    }
    if window > len {
        return Err(MfamError::Length(format!(
            "recording shorter than one instance window ({len} < {window} frames)"
        )));
    }
    let n = (len - window) / stride + 1;
    Ok((0..n).map(|i| (i * stride, i * stride + window)).collect())
}

/// Windowed temporal means of a `[D, T]` map: instances `[N, D]` plus spans.
pub fn build_instances(
    tape: &mut Tape,
    features: Var,
    window: usize,
    stride: usize,
) -> Result<(Var, Vec<(usize, usize)>)> {
    let spans = instance_spans(tape.value(features).cols(), window, stride)?;
    let z = tape.pool(features, PoolMode::Mean, PoolSpan::Windowed { window, stride })?;
    Ok((z, spans))
}

/// `s_i = w2 · tanh(W1 z_i + b1) + b2` for each instance row; returns `[N]`.
pub fn attention_scores(tape: &mut Tape, z: Var, p: &ParamVars) -> Result<Var> {
    let n = tape.value(z).rows();
    let h = tape.linear(z, p.att_w1, Some(p.att_b1))?;
    let h = tape.tanh(h);
    let s = tape.linear(h, p.att_w2, Some(p.att_b2))?;
    tape.reshape(s, vec![n])
}

/// Attention-weighted sum of instances.
pub fn aggregate_bag(tape: &mut Tape, z: Var, weights: Var) -> Result<Var> {
    tape.weighted_row_sum(z, weights)
}

pub fn classify(tape: &mut Tape, bag: Var, p: &ParamVars) -> Result<Var> {
    tape.affine(bag, p.cls_w, p.cls_b)
}

/// Conditioning vector `vec(z p^T)` of length `D * K`.
pub fn cdan_features(tape: &mut Tape, z: Var, probs: Var) -> Result<Var> {
    tape.outer(z, probs)
}

/// Gradient reversal, then a two-layer ReLU classifier over domains.
pub fn domain_discriminate(tape: &mut Tape, h: Var, p: &ParamVars, lambda: f64) -> Result<Var> {
    let r = tape.grad_reverse(h, lambda)?;
    let hidden = tape.affine(r, p.disc_w1, p.disc_b1)?;
    let hidden = tape.relu(hidden);
    tape.affine(hidden, p.disc_w2, p.disc_b2)
}

/// Handles to every intermediate of one bag's forward pass.
#[derive(Clone, Debug)]
pub struct BagGraph {
    pub encoder: EncoderVars,
    pub instances: Var,
    pub spans: Vec<(usize, usize)>,
    /// Softmax attention before gating (attention aggregator only).
    pub attention_raw: Option<Var>,
    /// Weights used for aggregation (gated attention, or uniform).
    pub weights: Option<Var>,
    pub bag_embedding: Var,
    pub logits: Var,
    pub probs: Var,
    pub domain_logits: Option<Var>,
}

/// Builds the graph from an already decomposed input. The discriminator
/// branch is built only when `lambda` is given.
pub fn forward_graph(
    tape: &mut Tape,
    x_fdm: Var,
    p: &ParamVars,
    cfg: &ModelConfig,
    lambda: Option<f64>,
) -> Result<BagGraph> {
    let encoder = mscae_forward(tape, x_fdm, p, cfg)?;
    let (z, spans) = build_instances(tape, encoder.gated, cfg.instance_window, cfg.instance_stride)?;
    let (attention_raw, weights, bag) = match cfg.aggregator {
        Aggregator::AttentionMil => {
            let s = attention_scores(tape, z, p)?;
            let a = tape.softmax(s);
            let gated = tape.topk_gate(a, cfg.topk_ratio)?;
            let bag = aggregate_bag(tape, z, gated)?;
            (Some(a), Some(gated), bag)
        }
        Aggregator::Gap => (None, None, tape.mean_rows(z)?),
    };
    let logits = classify(tape, bag, p)?;
    let probs = tape.softmax(logits);
    let domain_logits = match lambda {
        Some(lambda) => {
            let h = cdan_features(tape, bag, probs)?;
            Some(domain_discriminate(tape, h, p, lambda)?)
        }
        None => None,
    };
    Ok(BagGraph {
        encoder,
        instances: z,
        spans,
        attention_raw,
        weights,
        bag_embedding: bag,
        logits,
        probs,
        domain_logits,
    })
}

/// Per-recording output of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct BagResult {
    pub logits: Tensor,
    pub probs: Tensor,
    /// Aggregation weight per instance (gated attention, or uniform under
    /// the mean aggregator).
    pub attention: Vec<f64>,
    pub instance_spans: Vec<(usize, usize)>,
    pub bag_embedding: Tensor,
}

impl BagResult {
    /// Argmax class, lowest index on ties.
    pub fn predicted_class(&self) -> usize {
        argmax(self.probs.data())
    }

    fn from_graph(tape: &Tape, g: &BagGraph) -> Self {
        let n = g.spans.len();
        let attention = match g.weights {
            Some(w) => tape.value(w).data().to_vec(),
            None => vec![1.0 / n as f64; n],
        };
        Self {
            logits: tape.value(g.logits).clone(),
            probs: tape.value(g.probs).clone(),
            attention,
            instance_spans: g.spans.clone(),
            bag_embedding: tape.value(g.bag_embedding).clone(),
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Runs an already decomposed `[Cin, T]` input through the network.
pub fn forward_features(
    x_fdm: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    lambda: Option<f64>,
) -> Result<(BagResult, Option<Tensor>)> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let x = tape.leaf(x_fdm.clone());
    let g = forward_graph(&mut tape, x, &pv, cfg, lambda)?;
    let domain = g.domain_logits.map(|d| tape.value(d).clone());
    Ok((BagResult::from_graph(&tape, &g), domain))
}

/// Full pipeline from a raw `[C, T]` recording: band decomposition, then
/// the network. Returns the bag result and the domain logits.
pub fn forward_bag(
    x: &Tensor,
    bands: &BandSet,
    fs: f64,
    params: &ModelParams,
    cfg: &ModelConfig,
    lambda: f64,
) -> Result<(BagResult, Tensor)> {
    let x_fdm = frequency_decompose(x, bands, fs)?;
    let (res, domain) = forward_features(&x_fdm, params, cfg, Some(lambda))?;
    Ok((res, domain.expect("discriminator requested")))
}
