//! Federated multimodal emotion recognition.
//!
//! Each client conditions its physiological streams ([`dsp`]), extracts a
//! three-value feature vector and prepares face crops ([`features`]), trains a
//! small CNN ([`nn`]) and a random forest ([`forest`]), and fuses the two
//! per-modality predictions ([`fusion`]). CNN weights are averaged across
//! clients by a FedAvg server ([`fedcore`]) over a framed binary protocol
//! ([`transport`]). [`harness`] loads data, drives the three experiment modes
//! and writes reports.

pub mod dsp;
pub mod features;
pub mod fedcore;
pub mod forest;
pub mod fusion;
pub mod harness;
pub mod mem;
pub mod nn;
pub mod seed;
pub mod transport;

pub use features::EmotionLabel;
pub use fusion::{FusionPolicy, ProbVector};
pub use nn::ModelWeights;
