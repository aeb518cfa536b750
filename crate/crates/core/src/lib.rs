//! Few-shot class-incremental representation learning lab.
//!
//! A small reverse-mode tensor engine drives an MLP encoder trained with a
//! cosine-softmax objective plus optional contrastive and inter-class terms.
//! After the base session the classifier is replaced by class-mean
//! prototypes and the encoder is frozen; later sessions only add
//! prototypes. Analysis tools measure transferability, angular spread and
//! information-bottleneck quantities of the learned features.

pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod ib;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod protocol;
pub mod seed;

pub use error::{Error, Result};
