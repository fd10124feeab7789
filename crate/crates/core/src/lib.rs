//! Branching processes in nearly degenerate varying environment.
//!
//! The crate is split along the objects it computes with:
//!
//! * [`gf`] holds truncated probability generating functions and the
//!   linear-fractional family, the numeric substrate for every law below.
//! * [`environment`] describes offspring and immigration sequences whose
//!   means drift to one, together with the scaling sequence `A(n)`.
//! * [`exact`] computes exact laws of the discrete processes by composing
//!   generating functions backwards in time.
//! * [`sim`] samples discrete paths, including paths conditioned on
//!   survival through a Doob h-transform.
//! * [`limit`] collects the continuous-time limit objects: the birth-death
//!   process, its conditioned kernels and entrance law, and the branching
//!   process with immigration.
//! * [`stats`] provides empirical distributions and total variation tooling.
//!
//! Only `alloc` is required; the `std` feature is on by default and only
//! affects the error trait plumbing.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod environment;
pub mod error;
pub mod exact;
pub mod gf;
pub mod limit;
mod math;
pub mod sim;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
