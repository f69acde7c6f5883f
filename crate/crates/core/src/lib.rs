//! Geometry-aware autoencoding and warped pullback metrics.
//!
//! The crate is `no_std` + `alloc`. It covers the whole numerical pipeline:
//! a small reverse-mode differentiation engine and MLP stack ([`diffnet`]),
//! synthetic manifolds with analytic oracles ([`manifolds`]), the
//! distance-matching autoencoder ([`gae`]), off-manifold deviation scorers
//! ([`offmanifold`]), pullback metrics and volume elements ([`riemann`]),
//! volume-guided Langevin generation ([`volgen`]), geodesic fitting
//! ([`geodesics`]), OT-coupled geodesic flow matching ([`transport`]) and
//! evaluation metrics ([`evalkit`]).
//!
//! File formats, checkpoints and the command line live in the `geowarp`
//! companion crate.
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod prelude;

pub mod diffnet;
pub mod error;
pub mod evalkit;
pub mod gae;
pub mod geodesics;
pub mod linalg;
pub mod manifolds;
pub mod offmanifold;
pub mod riemann;
pub mod rng;
pub mod transport;
pub mod volgen;

pub use error::{Error, Result};
pub use linalg::Matrix;
