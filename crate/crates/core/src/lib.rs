//! Wearable motion-signal classification with frequency-band decomposition,
//! a multi-scale channel-attention encoder, attention-based multiple
//! instance pooling and conditional adversarial subject adaptation.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: tensors on a define-by-run tape, and Adam.
//! - [`signal`]: real FFT and band decomposition.
//! - [`model`]: the network and its checkpoints.
//! - [`data`]: recordings, preprocessing and the synthetic generator.
//! - [`train`]: the adversarial training loop, metrics and subject-level
//!   cross-validation.

pub mod autodiff;
pub mod data;
mod error;
pub mod model;
pub mod signal;
mod tensor;
pub mod train;

pub use error::{MfamError, Result};
pub use tensor::Tensor;

pub use data::{Bag, Recording, SynthSpec};
pub use model::{Aggregator, BagResult, Checkpoint, ModelConfig, ModelParams};
pub use signal::{Band, BandSet};
pub use train::{Metrics, TrainConfig};
