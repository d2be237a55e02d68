//! Error type shared across the crate.

use thiserror::Error;

/// Failure modes of the geometry, mapping and filtering operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A virtual transmitter coincides with the receiver (or sits on the body
    /// zenith axis), so ranges/angles or their Jacobian are undefined.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    /// The path segment never crosses the candidate reflecting plane.
    #[error("no intersection between the propagation segment and the reflector plane")]
    NoIntersection,

    /// The virtual transmitter equals its base station: a line-of-sight path
    /// has no physical reflector.
    #[error("line-of-sight path has no reflector")]
    LosPath,

    /// SNR must be a positive linear ratio.
    #[error("invalid SNR {0} (must be > 0)")]
    InvalidSnr(f64),

    /// The innovation covariance could not be factorized/inverted.
    #[error("singular innovation covariance")]
    SingularInnovation,

    /// Every particle weight collapsed to -inf; the filter cannot continue.
    #[error("all particle weights degenerate")]
    AllWeightsDegenerate,

    /// A wall with (near) zero horizontal extent defines no plane.
    #[error("degenerate wall: endpoints coincide horizontally")]
    DegenerateWall,
}
