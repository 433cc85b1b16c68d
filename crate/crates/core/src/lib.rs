//! Rectification of light by a pair of two-level emitters in a
//! one-dimensional photonic channel.
//!
//! The crate covers three driving regimes of the same device:
//!
//! - [`cwdrive`]: steady state and output fluxes under a continuous-wave
//!   coherent drive, optionally with broadband classical noise entering from
//!   the opposite side (folded into a dephasing channel);
//! - [`fockpulse`]: a single-photon wave packet, propagated through the
//!   coupled Fock-state master equations, with an optional inverted emitter;
//! - [`stochastic`]: explicit noise trajectories used to validate the
//!   averaged noise channel.
//!
//! [`sweep`] turns forward and mirrored runs into rectification factor,
//! transmission and diode efficiency, and scans or optimizes them over the
//! detuning and the inter-emitter phase `kL`. Units: the decay rate `γ` sets
//! the time scale and positions only enter through the phases `φ_i = k·x_i`.

pub mod cwdrive;
mod error;
pub mod fockpulse;
pub mod model;
pub mod neldermead;
pub mod ode;
pub mod stochastic;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{CMatrix, DensityMatrix, Direction, EmitterArray, Liouvillian, Operator};

pub type C64 = nalgebra::Complex<f64>;
