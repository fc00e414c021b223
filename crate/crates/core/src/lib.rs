//! Channel-permutation-invariant multivariate forecasting.
//!
//! A frozen per-channel codec turns every channel's history into one feature vector, a
//! permutation-equivariant attention block lets channels exchange information, and the same
//! codec decodes each channel's forecast. Training shuffles channel order; the audit tools
//! measure how much a model's accuracy depends on that order.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod codec;
pub mod data;
pub mod digest;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod presets;
pub mod spatial;
pub mod train;

pub use error::{Error, Result};
