//! Over-the-air phase calibration for reconfigurable intelligent surfaces.
//!
//! A b-bit RIS element is supposed to reflect with one of `L = 2^b` nominal
//! phases, but every (element, gear) pair carries its own manufacturing
//! deviation. This crate estimates the full `M_ris x L` phase table from
//! SIMO pilot measurements by treating the unknown phases and the cascaded
//! channel as the weights of a small two-branch network and training it with
//! per-sample gradient descent. It also assembles the Fisher information for
//! the same measurement model, so estimates can be benchmarked against the
//! Cramér-Rao bound.
//!
//! Module map:
//!
//! * [`model`]: configuration, phase tables, measurement containers.
//! * [`channel`]: channel synthesis, pilots, on/off receptions, despreading.
//! * [`schedule`]: permutation-based gear schedules and the identifiability bound.
//! * [`estimator`]: forward model, closed-form gradients, the training loop.
//! * [`crb`]: Jacobians of the group mean and the Fisher information matrix.
//! * [`harness`]: Monte Carlo experiments (RMSE vs CRB, convergence, runtime).
//! * [`cli`]: the `riscal` command-line front end.

pub mod channel;
pub mod cli;
pub mod config;
pub mod crb;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod io;
pub mod model;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
