//! Corpus handling, feature extraction, training, checkpoints and
//! synthesis around the `comedic-core` acoustic model.

pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod fixture;
pub mod melfile;
pub mod plot;
pub mod report;
pub mod synthesis;
pub mod training;

pub use error::{Result, SpeechError};
