//! Numerics for forecasting epidemic trends under non-pharmaceutical
//! interventions (NPIs) and prescribing NPI schedules by finite-horizon
//! optimal control.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! files, the network, threads or the clock lives in the `pandemic-fhoc`
//! companion crate.
//!
//! Layout:
//!
//! - [`model`]: the NPI-controlled SI compartmental model, its Euler
//!   discretization, co-state recursion and observation maps.
//! - [`npi`]: stringency vectors, admissible boxes and schedules.
//! - [`contact`]: the NPI-to-contagion map `h[u]` and its constrained fits.
//! - [`estimation`]: extended Kalman filter, RTS smoother, open-loop
//!   forecasts and innovation monitoring.
//! - [`fhoc`]: Hamiltonian, optimal-input rules, the filter/smoother based
//!   solver, a forward-backward sweep oracle and Pareto sweeps.
//! - [`training`]: the two-pass per-region training pipeline.
//! - [`synthetic`]: seeded synthetic regions with known ground truth.
#![no_std]

extern crate alloc;

pub mod contact;
pub mod estimation;
pub mod fhoc;
pub mod model;
pub mod npi;
pub mod synthetic;
pub mod training;

mod error;
mod linalg;
mod nnqp;

pub use error::{Error, Result};
pub use linalg::{Mat6, Vec6};
