//! Quantized switching controller synthesis for incrementally stable
//! switched systems.
//!
//! The pipeline: sample the dynamics ([`system`]), quantize onto a lattice
//! ([`lattice`]) to obtain a finite symbolic model ([`abstraction`]),
//! synthesize a safety or reachability controller on it and refine it into a
//! quantized controller for the continuous system ([`synthesis`]), compress
//! a determinization of it into an axis-aligned decision tree
//! ([`determinize`]) and run it in closed loop ([`runtime`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abstraction;
pub mod artifact;
pub mod config;
pub mod determinize;
pub mod error;
pub mod exec;
pub mod expm;
pub mod format;
pub mod lattice;
pub mod pipeline;
pub mod runtime;
pub mod synthesis;
pub mod system;
pub mod thermal;

pub use error::{Error, Result};
pub use exec::Exec;
