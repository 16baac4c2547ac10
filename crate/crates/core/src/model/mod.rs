//! The network: multi-scale channel-attention encoder, attention-based
//! multiple-instance pooling with top-k gating, classifier and conditional
//! domain discriminator.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{Aggregator, ModelConfig};
pub use forward::{
    aggregate_bag, argmax, attention_scores, build_instances, cdan_features, classify,
    domain_discriminate, forward_bag, forward_features, forward_graph, instance_spans,
    mscae_forward, BagGraph, BagResult, EncoderVars,
};
pub use params::{param_layout, ModelParams, ParamVars};
