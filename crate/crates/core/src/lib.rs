//! Graph interaction network for scene parsing.
//!
//! Local convolutional features are projected onto a small visual graph,
//! evolved together with a semantic graph built from class-name word
//! vectors, exchanged between the two graphs through softmax guidance
//! matrices, and re-projected onto the feature map. A semantic context
//! loss supervises the per-image semantic graph with class presence.
//!
//! Every operation ships a hand-derived backward pass; [`numerics::gradcheck`]
//! certifies them against central finite differences.

#![allow(clippy::too_many_arguments, clippy::type_complexity)]

pub mod cli;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod gi_unit;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod projection;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, Scalar};
