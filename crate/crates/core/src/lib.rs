#![no_std]
//! Core algorithms for counting densely packed circular machine parts.
//!
//! Two counting routes share one set of data types:
//!
//! - [`classical`] – saturation channel, Gaussian blur, Otsu foreground
//!   separation, Sobel edges and a Hough circle accumulator.
//! - [`net`] – a small correlation-based density regressor with exact
//!   reverse-mode gradients, trained by [`train`] against ground-truth maps
//!   from [`density`] under the objective in [`loss`].
//!
//! [`eval`] computes MAE/RMSE and multi-view aggregation, and [`synth`]
//! renders multi-view washer scenes with exact annotations.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, image codecs
//! and the command-line front end live in the `partcount` crate.

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classical;
pub mod dataset;
pub mod density;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod loss;
pub mod net;
pub mod optim;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{BBox, Point};
