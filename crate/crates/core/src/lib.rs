//! Attenuated ray transforms on spherical caps and related numerics.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgo;
pub mod error;
pub mod euclid_xray;
pub mod geometry;
pub mod hemi_xray;
pub mod io;
pub mod logcvx;
pub mod quad;
pub mod recon;
pub mod spectral;

pub use error::{Error, Result};
