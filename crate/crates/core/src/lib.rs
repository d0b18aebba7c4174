//! Core of an expressive multi-speaker text-to-speech system for
//! stand-up comedy: phoneme frontend with per-speaker filler tokens, corpus
//! statistics, a prosody-token encoder, conditional layer normalization and
//! a non-autoregressive acoustic model, together with the losses and the
//! optimizer used to train it.
//!
//! The crate is `no_std` and only needs an allocator. File formats, audio
//! and the command line live in the `comedic-speech` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod conditioning;
pub mod error;
pub mod frontend;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod optim;
pub mod nn;
pub mod params;
pub mod prosody;
pub mod stats;
pub mod tensor;
pub mod trace;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Matrix;
