//! Prediction confidence from feature-space neighbors.
//!
//! A small point-cloud autoencoder supplies latent vectors and
//! reconstruction errors. The distance from a new sample's latent vector to
//! its nearest training embeddings predicts its error; thresholds on that
//! distance decide whether to trust a prediction or abstain, and pick which
//! new samples to label when growing the training set.

pub mod autoenc;
pub mod confidence;
pub mod corpus;
pub mod embedspace;
pub mod error;
pub mod format;
pub mod nnindex;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
