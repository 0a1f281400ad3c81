//! Forward and inverse simulation of an NV-center ensemble mounted on a
//! cantilever.
//!
//! The crate is organised bottom-up:
//!
//! - [`nvcore`]: single-NV spin-1 Hamiltonian, labelled eigenstates,
//!   eigenstate magnetic moments and `mu x B` torques, ODMR spectra.
//! - [`spindyn`]: two-level master equation for a driven transition,
//!   stationary state, linearised FM response, a fixed-step Bloch integrator
//!   and the angular-momentum torque decomposition.
//! - [`mech`]: first flexural mode of the cantilever (susceptibility, thermal
//!   noise, sensitivities, torque/force/displacement conversions).
//! - [`signal`]: end-to-end synthesis of FM-MDMR sweeps, quadratures, power
//!   scans, lock-in demodulation and background subtraction.
//! - [`inverse`]: field recovery from an ODMR dip pair and spin-count fits.
//!
//! Internally every frequency is an angular frequency in rad/s and every
//! field is in Tesla. Hz and mT only appear at the CLI boundary.

pub mod error;
pub mod inverse;
pub mod mech;
pub mod nvcore;
pub mod ode;
pub mod signal;
pub mod spindyn;
pub mod trace;

pub use error::{Error, Result};
pub use trace::SignalTrace;

pub use nalgebra::Vector3;
pub use num_complex::Complex64;

/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
