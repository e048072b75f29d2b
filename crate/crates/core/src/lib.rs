//! Multi-view contrastive pre-training and lightweight supervised fine-tuning
//! for multi-channel EEG classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`signal`]: epoch containers, FIR band-pass, epoching, z-scoring and FFT helpers.
//! - [`augment`]: the seven time/frequency augmentation operators and their composition.
//! - [`augsched`]: the softmax success-score sampler that chooses augmentation plans.
//! - [`encoder`]: the three-branch convolutional encoder, projection heads and classifier.
//! - [`objective`]: multi-view NT-Xent and label-smoothed cross-entropy, with gradients.
//! - [`optim`]: AdamW, warm-restart cosine schedule, Lookahead, SWA and layer-wise unfreezing.
//! - [`pipeline`]: pre-training, fine-tuning, subject-disjoint splits and metrics.
//! - [`interpret`]: occlusion importance over frequency bands, channels and time windows.
//! - [`synth`]: a synthetic multi-site EEG generator with a controllable class signature.
//! - [`io`]: the binary epoch container, checkpoints and CSV ingestion.
//! - [`cli`]: the `mclpd` command implementations and run manifests.

pub mod augment;
pub mod augsched;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod interpret;
pub mod io;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
