//! SLAM over cellular multipath components.
//!
//! Downlink signals from a handful of base stations reach a vehicle over
//! several propagation paths. Each resolvable path behaves like a synchronized
//! transmitter of its own: the line-of-sight path is the base station itself,
//! and every single-bounce reflection acts as the base station mirrored across
//! the reflecting surface (a *virtual transmitter*, VT). Given per-path
//! pseudorange, azimuth and elevation of arrival, plus wheel/IMU velocities,
//! this crate jointly estimates the vehicle trajectory and the VT positions
//! with a Rao-Blackwellized particle filter: particles carry pose hypotheses,
//! VTs are per-particle Gaussians maintained by small EKFs, and measurements
//! from different antenna ports and base stations are associated and mapped
//! independently.
//!
//! The crate also ships a geometric scenario simulator (mirror-image VT
//! derivation, SNR-dependent noise, clutter, missed detections, clock
//! offsets) and the evaluation utilities used by the `vtslam` CLI.
//!
//! Modules follow the processing pipeline:
//!
//! - [`geometry`]: frames, the measurement function `h`, its Jacobian,
//!   first-order-reflection mapping.
//! - [`motion`]: velocity integration and the probabilistic motion model.
//! - [`vt_map`]: per-landmark Gaussian posteriors (EKF update, lifecycle).
//! - [`association`]: gated maximum-likelihood assignment (Hungarian).
//! - [`filter`]: the particle filter itself.
//! - [`simulator`]: scenario definition and measurement synthesis.
//! - [`io`] / [`eval`]: file formats and error metrics.

pub mod association;
pub mod error;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod motion;
pub mod rng;
pub mod simulator;
pub mod vt_map;

pub use error::Error;

/// Speed of light used for delay/pseudorange conversion, m/s.
///
/// Kept at the rounded value so a 100 ns clock offset is exactly 30 m.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Result alias for fallible operations in this crate.
pub type Result<T> = std::result::Result<T, Error>;
