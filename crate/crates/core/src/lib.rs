//! Construction and verification of a robust massive attractor.
//!
//! The pipeline goes bottom-up:
//!
//! - [`affine`]: contracting affine maps, the box/rotation/translation
//!   construction and k-th roots of similarity maps.
//! - [`region`]: parallelotope unions and an adaptive-subdivision
//!   certifier for strict covering relations.
//! - [`fiber`]: the torus fiber, the Morse gradient flow and the glued arc
//!   of fiber diffeomorphisms.
//! - [`system`]: the skew product over `phi -> m*phi`, its solenoid
//!   extension and perturbed (non skew) endomorphisms.
//! - [`lab`]: trapping, occupancy, density, graph, Birkhoff and Lyapunov
//!   checks, aggregated into a verdict.
//! - [`config`] and [`runner`]: the `key = value` configuration and the
//!   command driver behind the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod affine;
pub mod config;
pub mod error;
pub mod fiber;
pub mod lab;
pub mod region;
pub mod runner;
pub mod system;

pub use error::{Error, Result};
