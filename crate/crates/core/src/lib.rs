//! One-class presentation attack detection (PAD) engine.
//!
//! Trains convolutional autoencoders exclusively on bona fide multi-channel
//! fingertip images and scores unseen samples by their reconstruction error.
//! A sample that deviates from the bona fide distribution reconstructs badly
//! and receives a high anomaly score. The crate ships:
//!
//! * a minimal differentiable layer zoo with an RMSprop optimizer ([`nn`]),
//! * three reconstruction-error losses, including a per-pixel weighted MSE
//!   that masks out pixels the model systematically cannot reconstruct
//!   ([`losses`]),
//! * the Conv/Pooling/Dense autoencoder architectures, their bona-fide-only
//!   training loop and checkpoint format ([`models`]),
//! * one-class GMM and one-class SVM benchmark classifiers over latent
//!   features ([`baselines`]),
//! * ISO 30107-3 evaluation: APCER/BPCER, DET curves, D-EER, pAUC@20% and
//!   weighted score fusion ([`evaluation`]),
//! * a deterministic synthetic data generator plus subject-disjoint splits
//!   and a binary sample container ([`dataset`]).
//!
//! Everything is deterministic given a seed: same seed, same bytes.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
