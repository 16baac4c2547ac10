use serde::{Deserialize, Serialize};

use crate::error::{MfamError, Result};

/// How instance embeddings are pooled into the bag embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Attention scores, softmax and top-k gating.
    #[default]
    AttentionMil,
    /// Uniform mean over all instances (ablation).
    Gap,
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregator::AttentionMil => "attention_mil",
            Aggregator::Gap => "gap",
        })
    }
}

impl std::str::FromStr for Aggregator {
    type Err = MfamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention_mil" => Ok(Aggregator::AttentionMil),
            "gap" => Ok(Aggregator::Gap),
            other => Err(MfamError::config(format!(
                "unknown aggregator {other:?} (expected attention_mil or gap)"
            ))),
        }
    }
}

/// Network architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels after band decomposition (`C * |B|`).
    pub in_channels: usize,
    pub hidden_dim: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub attention_hidden: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    /// Instance window length in frames.
    pub instance_window: usize,
    pub instance_stride: usize,
    pub topk_ratio: f64,
    pub channel_reduction: usize,
    pub discr_hidden: usize,
    #[serde(default)]
    pub aggregator: Aggregator,
}

impl ModelConfig {
    /// Default architecture for the given data dimensions.
    pub fn new(in_channels: usize, num_classes: usize, num_domains: usize) -> Self {
        Self {
            in_channels,
            hidden_dim: 64,
            kernel_size: 3,
            dilations: vec![1, 2, 4],
            attention_hidden: 64,
            num_classes,
            num_domains,
            instance_window: 100,
            instance_stride: 50,
            topk_ratio: 0.3,
            channel_reduction: 4,
            discr_hidden: 128,
            aggregator: Aggregator::AttentionMil,
        }
    }

    pub fn reduced_dim(&self) -> usize {
        self.hidden_dim / self.channel_reduction
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("hidden_dim", self.hidden_dim),
            ("attention_hidden", self.attention_hidden),
            ("num_classes", self.num_classes),
            ("num_domains", self.num_domains),
            ("instance_window", self.instance_window),
            ("instance_stride", self.instance_stride),
            ("channel_reduction", self.channel_reduction),
            ("discr_hidden", self.discr_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(MfamError::config(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(MfamError::config("num_classes must be at least 2"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(MfamError::config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(MfamError::config("dilations must be a nonempty list of positive integers"));
        }
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(MfamError::config(format!(
                "topk_ratio must lie in (0, 1], got {}",
                self.topk_ratio
            )));
        }
        if self.hidden_dim % self.channel_reduction != 0 {
            return Err(MfamError::config(format!(
                "hidden_dim {} is not divisible by channel_reduction {}",
                self.hidden_dim, self.channel_reduction
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::new(18, 2, 4);
        c.validate().unwrap();
        assert_eq!(c.reduced_dim(), 16);
    }

    #[test]
    fn invalid_configs() {
        let base = ModelConfig::new(18, 2, 4);
        let mut c = base.clone();
        c.hidden_dim = 30;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.topk_ratio = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.instance_stride = 0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.kernel_size = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(ModelConfig::new(18, 2, 4)).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelConfig>(v).is_err());
    }
}
