//! Slow-light emission modelling for W1 photonic-crystal waveguides.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] builds triangular-lattice unit cells and W1 supercells and
//!   evaluates analytic Fourier coefficients of the dielectric function.
//! * [`pwe`] assembles and solves the plane-wave eigenproblem for the
//!   out-of-plane magnetic field (TE-like modes).
//! * [`dispersion`] extracts the guided W1 branch, its group velocity,
//!   effective mode volume and band edge.
//! * [`emission`] turns a guided mode into decay-rate and β-factor spectra.
//! * [`tcspc`] models, synthesises and fits time-resolved decay histograms.

pub mod dispersion;
pub mod emission;
pub mod error;
pub mod geometry;
pub mod interp;
pub mod linalg;
pub mod pwe;
pub mod tcspc;

pub use error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;
