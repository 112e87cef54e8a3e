//! Fault diagnosis for linear heterodirectional hyperbolic ODE-PDE systems.
//!
//! The crate synthesizes integral kernels that turn boundary measurements
//! and known inputs into finite-time fault estimates, and runs the resulting
//! sliding-window FIR filter banks over simulated or recorded data.
//!
//! Pipeline: [`model`] validates the plant and derives transport geometry,
//! [`backstepping`] maps the reversed kernel system into a transport cascade,
//! [`trajectory`] plans the finite-time transition that solves the kernel
//! equations, [`simulate`] produces ground-truth data and [`diagnosis`]
//! evaluates the filters, thresholds and detection logic.

pub mod backstepping;
pub mod bundled;
pub mod config;
pub mod dd;
pub mod diagnosis;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod residual;
pub mod simulate;
pub mod trajectory;

pub use error::{Error, Result};
