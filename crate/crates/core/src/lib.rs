//! Steady-state simulation and decentralized parameter estimation for single-bus
//! DC microgrids with droop-controlled converters.
//!
//! Every converter perturbs its droop reference voltage with a known training
//! sequence. Each controller then recovers the generation capacities of all other
//! units and the bus load from its own averaged voltage readings, without any
//! communication link.
//!
//! * [`grid`]: droop law, load model and the closed-form bus voltage.
//! * [`training`]: Hadamard training plans and the excitation check.
//! * [`measurement`]: per-slot steady states and noisy slot averages.
//! * [`estimator`]: regression assembly and the least-squares MLE.
//! * [`crb`]: Fisher information and Cramér–Rao bounds.
//! * [`experiment`]: Monte Carlo sweeps and report generation.

// `!(x > 0.0)` and friends reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crb;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod grid;
mod linalg;
pub mod measurement;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{RankDiagnostics, RCOND_GATE};
