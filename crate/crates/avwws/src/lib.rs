//! Audio-visual wake word spotting toolkit.
//!
//! End-to-end pipeline for the wake word spotting task: a deterministic
//! synthetic audio-visual dataset generator, log-mel filterbank features,
//! audio/video augmentation, hybrid 3D/2D residual backbones with optional
//! SimAM attention, three audio-visual fusion strategies and FRR/FAR/WWS
//! evaluation. Everything runs on CPU with hand-written forward/backward
//! passes so training and inference are deterministic and dependency-light.



pub mod augment;
pub mod backbones;
pub mod data;
pub mod error;
pub mod features;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
