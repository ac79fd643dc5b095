//! Density- and capacity-dependent branching populations.
//!
//! A population starts from a handful of individuals, grows like a
//! supercritical Galton-Watson process while sparse, and is then carried by
//! the deterministic density map `f(x) = x m(x)` once it reaches a fraction
//! of the capacity `K`. This crate simulates that pipeline and checks its
//! limit statements numerically:
//!
//! * [`repro_laws`]: offspring laws and grid checks of their regularity;
//! * [`simulator`]: exact, aggregate and coupled trajectories;
//! * [`wlimit`]: the martingale limit `W(z0)` of the comparison process;
//! * [`schroeder`]: iterates of `f`, the limit function `h` solving
//!   `h(x) = f(h(x/a))`, its inverse and fixed points;
//! * [`experiments`]: finite-K verification runs and recovery of `z0`;
//! * [`cli_io`]: run configuration, CSV/JSON output and the command driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod error;
pub mod experiments;
pub mod repro_laws;
pub mod rng;
pub mod schroeder;
pub mod simulator;
pub mod stats;
pub mod wlimit;

pub use error::{Error, Result};
pub use repro_laws::{OffspringLaw, UNBOUNDED};
pub use simulator::{SimConfig, SimMode};
