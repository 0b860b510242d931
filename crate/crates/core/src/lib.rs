//! Self-supervised denoising of multi-coil MR images from channel-split training pairs.
//!
//! Pipeline: [`simulator`] builds acquisitions, [`pairgen`] turns one acquisition
//! into a noise-independent input/label pair, [`neural`] and [`training`] fit a
//! residual CNN on those pairs, [`metrics`] scores the result, and [`io`] plus
//! [`cli`] move everything to and from disk.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod pairgen;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
