#![cfg_attr(not(test), no_std)]

//! Word-level turn-taking and backchannel prediction.
//!
//! Everything algorithmic lives here, free of IO: the numeric kernel (dense
//! linear algebra, MLP, Adam, finite-difference verification, seeded RNG), the
//! three uni-modal encoders, the low-rank fusion module with modality
//! selection, the annotation rules, the synthetic conversation generator with
//! its exact Bayes oracle, two-stage training, and evaluation. The companion
//! CLI crate owns files, processes, and streams.

extern crate alloc;

pub mod checkpoint;
pub mod dialogue;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod manifest;
pub mod mlp;
pub mod opt;
pub mod rng;
pub mod eval;
pub mod features;
pub mod model;
pub mod sample;
pub mod stream;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{CoreError, Result};
pub use rng::Rng;
