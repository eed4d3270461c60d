//! Budgeted, non-revisitable active search over synthetic geospatial
//! regions: concept-conditioned relevance modeling with a conditional VAE,
//! buffer-based online meta-learning, and relevance-guided sampling.

// `!(x > 0.0)` guards are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buffers;
pub mod clustering;
pub mod environment;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
