//! Brain-informed auditory scene understanding at desk scale.
//!
//! The pipeline synthesizes two-talker scenes, simulates neural recordings
//! that favour the attended talker, decodes the attended speaker cluster
//! with a BiLSTM, selects a separated stream by centroid proximity, builds a
//! chain-of-thought prompt for a pluggable answer backend, and scores every
//! stage.

pub mod audio;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod intention;
pub mod neural;
pub mod rng;
pub mod separation;
pub mod speaker;

pub use error::{Error, Result};
