//! Dual-path video-to-music retrieval.
//!
//! Trains joint content/emotion/fusion embedding spaces over precomputed
//! feature vectors and evaluates retrieval quality with Recall@K. The crate
//! is organized around:
//!
//! - [`numgrad`]: dense tensors, a small reverse-mode gradient tape, and a
//!   finite-difference gradient oracle;
//! - [`model`]: the dual-path network (shared encoder-decoder content space,
//!   shared-MLP emotion space, splicing/interactive fusion);
//! - [`losses`]: the loss components and their composites, including the
//!   polarity penalty metric loss;
//! - [`data`]: feature-table I/O, pair-group splitting, batching, and a
//!   synthetic paired-feature generator;
//! - [`training`]: the Adam training loop, loss logging, checkpoints;
//! - [`retrieval`]: corpus embedding, ranking, and Recall@K reports;
//! - [`cli`]: the `vmr` command-line entry point.

pub mod cli;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod losses;
pub mod model;
pub mod numgrad;
pub mod retrieval;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
