use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{Tape, Var};
use crate::error::{MfamError, Result};
use crate::tensor::Tensor;

/// Every learnable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// One `[D, Cin, k]` kernel per dilation.
    pub branch_w: Vec<Tensor>,
    pub branch_b: Vec<Tensor>,
    /// `[D, branches * D, 1]`.
    pub fuse_w: Tensor,
    pub fuse_b: Tensor,
    /// Shared channel-attention MLP, `[D/r, D]` then `[D, D/r]`.
    pub ca_w1: Tensor,
    pub ca_w2: Tensor,
    pub att_w1: Tensor,
    pub att_b1: Tensor,
    /// `[1, attention_hidden]`.
    pub att_w2: Tensor,
    pub att_b2: Tensor,
    pub cls_w: Tensor,
    pub cls_b: Tensor,
    /// `[discr_hidden, D * K]`.
    pub disc_w1: Tensor,
    pub disc_b1: Tensor,
    pub disc_w2: Tensor,
    pub disc_b2: Tensor,
}

/// Canonical `(name, shape)` list for a configuration. The order here is
/// the order of [`ModelParams::tensors`] and of checkpoint files.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.hidden_dim;
    let nb = cfg.dilations.len();
    let mut out = Vec::new();
    for (i, dil) in cfg.dilations.iter().enumerate() {
        out.push((
            format!("branch{i}_d{dil}.weight"),
            vec![d, cfg.in_channels, cfg.kernel_size],
        ));
        out.push((format!("branch{i}_d{dil}.bias"), vec![d]));
    }
    let rest = [
        ("fuse.weight", vec![d, nb * d, 1]),
        ("fuse.bias", vec![d]),
        ("channel_attn.fc1", vec![cfg.reduced_dim(), d]),
        ("channel_attn.fc2", vec![d, cfg.reduced_dim()]),
        ("attention.w1", vec![cfg.attention_hidden, d]),
        ("attention.b1", vec![cfg.attention_hidden]),
        ("attention.w2", vec![1, cfg.attention_hidden]),
        ("attention.b2", vec![1]),
        ("classifier.weight", vec![cfg.num_classes, d]),
        ("classifier.bias", vec![cfg.num_classes]),
        ("discriminator.w1", vec![cfg.discr_hidden, d * cfg.num_classes]),
        ("discriminator.b1", vec![cfg.discr_hidden]),
        ("discriminator.w2", vec![cfg.num_domains, cfg.discr_hidden]),
        ("discriminator.b2", vec![cfg.num_domains]),
    ];
    out.extend(rest.into_iter().map(|(n, s)| (n.to_string(), s)));
    out
}

fn is_bias(name: &str) -> bool {
    name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2")
}

impl ModelParams {
    /// Weights uniform in `±sqrt(1 / fan_in)`, biases zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_layout(cfg)
            .into_iter()
            .map(|(name, shape)| {
                if is_bias(&name) {
                    return Tensor::zeros(&shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let bound = (1.0 / fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("layout shape")
            })
            .collect();
        Self::from_tensors(cfg, tensors)
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let tensors = param_layout(cfg)
            .into_iter()
            .map(|(_, s)| Tensor::zeros(&s))
            .collect();
        Self::from_tensors(cfg, tensors)
    }

    /// Builds parameters from tensors in layout order, checking shapes.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = param_layout(cfg);
        if layout.len() != tensors.len() {
            return Err(MfamError::shape(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(MfamError::shape(format!(
                    "parameter {name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let nb = cfg.dilations.len();
        let mut it = tensors.into_iter();
        let mut branch_w = Vec::with_capacity(nb);
        let mut branch_b = Vec::with_capacity(nb);
        for _ in 0..nb {
            branch_w.push(it.next().unwrap());
            branch_b.push(it.next().unwrap());
        }
        let mut next = || it.next().unwrap();
        Ok(Self {
            branch_w,
            branch_b,
            fuse_w: next(),
            fuse_b: next(),
            ca_w1: next(),
            ca_w2: next(),
            att_w1: next(),
            att_b1: next(),
            att_w2: next(),
            att_b2: next(),
            cls_w: next(),
            cls_b: next(),
            disc_w1: next(),
            disc_b1: next(),
            disc_w2: next(),
            disc_b2: next(),
        })
    }

    /// All tensors in layout order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.branch_w.iter().zip(&self.branch_b) {
            out.push(w);
            out.push(b);
        }
        out.extend([
            &self.fuse_w,
            &self.fuse_b,
            &self.ca_w1,
            &self.ca_w2,
            &self.att_w1,
            &self.att_b1,
            &self.att_w2,
            &self.att_b2,
            &self.cls_w,
            &self.cls_b,
            &self.disc_w1,
            &self.disc_b1,
            &self.disc_w2,
            &self.disc_b2,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.branch_w.iter_mut().zip(self.branch_b.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.extend([
            &mut self.fuse_w,
            &mut self.fuse_b,
            &mut self.ca_w1,
            &mut self.ca_w2,
            &mut self.att_w1,
            &mut self.att_b1,
            &mut self.att_w2,
            &mut self.att_b2,
            &mut self.cls_w,
            &mut self.cls_b,
            &mut self.disc_w1,
            &mut self.disc_b1,
            &mut self.disc_w2,
            &mut self.disc_b2,
        ]);
        out
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Places every tensor on `tape` as a leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        ParamVars::from_vars(self.branch_w.len(), vars)
    }
}

/// Tape handles for a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub branch_w: Vec<Var>,
    pub branch_b: Vec<Var>,
    pub fuse_w: Var,
    pub fuse_b: Var,
    pub ca_w1: Var,
    pub ca_w2: Var,
    pub att_w1: Var,
    pub att_b1: Var,
    pub att_w2: Var,
    pub att_b2: Var,
    pub cls_w: Var,
    pub cls_b: Var,
    pub disc_w1: Var,
    pub disc_b1: Var,
    pub disc_w2: Var,
    pub disc_b2: Var,
    all: Vec<Var>,
}

impl ParamVars {
    fn from_vars(branches: usize, all: Vec<Var>) -> Self {
        let v = &all;
        let o = 2 * branches;
        Self {
            branch_w: (0..branches).map(|i| v[2 * i]).collect(),
            branch_b: (0..branches).map(|i| v[2 * i + 1]).collect(),
            fuse_w: v[o],
            fuse_b: v[o + 1],
            ca_w1: v[o + 2],
            ca_w2: v[o + 3],
            att_w1: v[o + 4],
            att_b1: v[o + 5],
            att_w2: v[o + 6],
            att_b2: v[o + 7],
            cls_w: v[o + 8],
            cls_b: v[o + 9],
            disc_w1: v[o + 10],
            disc_b1: v[o + 11],
            disc_w2: v[o + 12],
            disc_b2: v[o + 13],
            all,
        }
    }

    /// Handles in layout order.
    pub fn all(&self) -> &[Var] {
        &self.all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_respects_bounds_and_layout() {
        let cfg = ModelConfig::new(18, 4, 6);
        let p = ModelParams::init(&cfg, 7).unwrap();
        assert_eq!(p.tensors().len(), param_layout(&cfg).len());
        assert_eq!(p.disc_w1.shape(), &[128, 256]);
        assert_eq!(p.fuse_w.shape(), &[64, 192, 1]);
        let bound = (1.0 / (18.0 * 3.0f64)).sqrt();
        assert!(p.branch_w[0].data().iter().all(|v| v.abs() <= bound));
        assert!(p.cls_b.data().iter().all(|&v| v == 0.0));
        assert_eq!(p, ModelParams::init(&cfg, 7).unwrap());
        assert_ne!(p, ModelParams::init(&cfg, 8).unwrap());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let cfg = ModelConfig::new(4, 2, 2);
        let mut t = ModelParams::zeros(&cfg).unwrap().into_tensors();
        t[3] = Tensor::zeros(&[2]);
        assert!(ModelParams::from_tensors(&cfg, t).is_err());
    }
}
