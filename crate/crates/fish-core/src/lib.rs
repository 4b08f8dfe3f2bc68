//! Streaming-first unified seismic network.
//!
//! One model, trained in parallel mode on full sequences, emits phase picks,
//! magnitude and relative location at every timestep of a continuous
//! 3-channel waveform stream when run in recurrent mode. The two execution
//! modes are algebraically equivalent, which is what makes desk-side training
//! and O(1)-per-sample deployment two views of the same weights.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation.
//! File IO, the CLI and wall-clock benchmarking live in the companion
//! `fish-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod decoder;
pub mod embedder;
pub mod eval;
pub mod fsh1;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod retention;
pub mod rng;
pub mod scalar;
pub mod session;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;

pub use scalar::Real;
pub use tensor::{Tensor, TensorError};
