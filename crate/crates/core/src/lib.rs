//! Dispatch planning for eviction-order enforcement.
//!
//! The crate couples three layers:
//!
//! - a reflected Brownian motion control model whose value-function gradient is
//!   learned with a neural HJB solver ([`rbm`], [`hjb`], [`neural`]),
//! - a budgeted prize-collecting routing heuristic built on Goemans–Williamson
//!   moat growth ([`pcst`], [`geo`]) and a learned surrogate of its value
//!   ([`surrogate`]),
//! - a day-by-day simulator with three prize policies and the estimators used to
//!   calibrate it ([`sim`], [`policies`], [`estimation`], [`synth`]).
//!
//! Neural and diffusion code is generic over [`Scalar`] (`f32` or `f64`); routing
//! and simulation work in `f64` minutes and days.

// `!(x > 0.0)` is how validation rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod error;
pub mod estimation;
pub mod geo;
pub mod hjb;
pub mod neural;
pub mod pcst;
pub mod policies;
pub mod rbm;
pub mod sim;
pub mod surrogate;
pub mod synth;

mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp = neural::Mlp<f64>;
pub type Mlp32 = neural::Mlp<f32>;
pub type ModelParams = rbm::ModelParams<f64>;
pub type PathBundle = rbm::PathBundle<f64>;
pub type ReferencePolicy = rbm::ReferencePolicy<f64>;
