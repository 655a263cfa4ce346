//! Aggregated transmission propagation for haze removal and layer separation.
//!
//! The crate is `no_std` (with `alloc`) and carries only the numerics:
//!
//! * [`field`], [`conv`], [`dct`], [`filter`]: dense grids, reflective-padded
//!   convolution and its exact adjoint, the mean-free DCT filter basis and
//!   min filters.
//! * [`prior`]: airlight, the bounded-radiance transmission prior, the dark
//!   channel baseline and underwater background light.
//! * [`activation`], [`network`], [`energy`]: learnable piecewise-linear
//!   influence functions, the unrolled residual propagation and the Gibbs
//!   energy audit of the data term.
//! * [`training`]: loss, hand-derived backpropagation, L-BFGS and the
//!   greedy/joint schedules.
//! * [`synth`]: procedural depth, scenes and scattering-model synthesis.
//! * [`separation`]: half-quadratic layer separation with plug-in prior
//!   operators and a convergence certificate.
//! * [`recovery`], [`metrics`], [`pipeline`]: radiance recovery, PSNR/SSIM
//!   and the dehaze / underwater / derain pipelines.
//!
//! File formats, image IO and the command line live in the `dpatn` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod activation;
pub mod conv;
pub mod dct;
pub mod energy;
pub mod error;
pub mod field;
pub mod filter;
mod math;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod prior;
pub mod recovery;
pub mod separation;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use field::{ImageRgb, Kernel, ScalarField};
