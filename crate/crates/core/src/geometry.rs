//! Coordinate frames and the range/angle measurement model.
//!
//! The world frame is a local East-North-Up tangent plane; the body frame is
//! attached to the receiver with x forward, y left, z up. Orientation is
//! parameterized by intrinsic Z-Y-X Euler angles (yaw, then pitch, then roll),
//! and [`rotation_matrix`] returns the world-to-body rotation.
//!
//! The measurement function `h` maps a transmitter position and a vehicle
//! pose to (range, azimuth, elevation) as seen in the body frame; its inverse
//! and its Jacobian with respect to the transmitter position live here too.

use nalgebra::{Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::{Error, Result};

/// Separation below which range/angle geometry is treated as degenerate, m.
pub const EPS_RANGE: f64 = 1e-6;

/// Vehicle position and orientation at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// World-frame position, m.
    pub position: Vector3<f64>,
    /// Yaw about world z, rad, in (-pi, pi].
    pub yaw: f64,
    /// Pitch, rad, in [-pi/2, pi/2].
    pub pitch: f64,
    /// Roll, rad, in (-pi, pi].
    pub roll: f64,
}

impl Pose {
    pub fn new(position: Vector3<f64>, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            position,
            yaw: wrap_angle(yaw),
            pitch: pitch.clamp(-FRAC_PI_2, FRAC_PI_2),
            roll: wrap_angle(roll),
        }
    }

    /// Pose at the world origin with zero attitude.
    pub fn origin() -> Self {
        Self::new(Vector3::zeros(), 0.0, 0.0, 0.0)
    }

    /// World-to-body rotation for this pose's attitude.
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.yaw, self.pitch, self.roll)
    }
}

/// One multipath component: pseudorange plus arrival angles, with SNR kept
/// alongside by the callers that need it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcMeasurement {
    /// Pseudorange, m (> 0).
    pub range: f64,
    /// Azimuth angle of arrival in the body frame, rad, in (-pi, pi].
    pub azimuth: f64,
    /// Elevation angle of arrival above the body horizontal plane, rad,
    /// in [-pi/2, pi/2].
    pub elevation: f64,
}

impl MpcMeasurement {
    pub fn new(range: f64, azimuth: f64, elevation: f64) -> Self {
        Self {
            range,
            azimuth,
            elevation,
        }
    }
}

/// Wraps an angle to (-pi, pi]. In-range values pass through unchanged.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI); // [0, 2*pi)
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// World-to-body rotation for intrinsic Z-Y-X (yaw, pitch, roll) attitude.
///
/// The body-to-world matrix is `Rz(yaw) * Ry(pitch) * Rx(roll)`; this returns
/// its transpose, so `rotation_matrix(..) * v_world` expresses a world vector
/// in body coordinates.
pub fn rotation_matrix(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    // Rows of (Rz*Ry*Rx)^T written out directly.
    Matrix3::new(
        cy * cp,
        sy * cp,
        -sp,
        cy * sp * sr - sy * cr,
        sy * sp * sr + cy * cr,
        cp * sr,
        cy * sp * cr + sy * sr,
        sy * sp * cr - cy * sr,
        cp * cr,
    )
}

/// Predicted (range, azimuth, elevation) of a transmitter at `vt` as observed
/// from `pose`.
pub fn predict_measurement(vt: &Vector3<f64>, pose: &Pose) -> Result<MpcMeasurement> {
    predict_with_rotation(vt, &pose.position, &pose.rotation())
}

/// [`predict_measurement`] with the world-to-body rotation precomputed.
pub(crate) fn predict_with_rotation(
    vt: &Vector3<f64>,
    position: &Vector3<f64>,
    rot: &Matrix3<f64>,
) -> Result<MpcMeasurement> {
    let delta = vt - position;
    let range = delta.norm();
    if range <= EPS_RANGE {
        return Err(Error::DegenerateGeometry(
            "transmitter coincides with the receiver",
        ));
    }
    let body = rot * delta;
    let azimuth = wrap_angle(body.y.atan2(body.x));
    let elevation = body.z.atan2(body.xy().norm());
    Ok(MpcMeasurement::new(range, azimuth, elevation))
}

/// Jacobian of [`predict_measurement`] with respect to the transmitter
/// position, rows ordered (range, azimuth, elevation).
pub fn measurement_jacobian(vt: &Vector3<f64>, pose: &Pose) -> Result<Matrix3<f64>> {
    jacobian_with_rotation(vt, &pose.position, &pose.rotation())
}

/// [`measurement_jacobian`] with the world-to-body rotation precomputed.
pub(crate) fn jacobian_with_rotation(
    vt: &Vector3<f64>,
    position: &Vector3<f64>,
    rot: &Matrix3<f64>,
) -> Result<Matrix3<f64>> {
    let delta = vt - position;
    let range = delta.norm();
    if range <= EPS_RANGE {
        return Err(Error::DegenerateGeometry(
            "transmitter coincides with the receiver",
        ));
    }
    let body = rot * delta;
    let rho2 = body.x * body.x + body.y * body.y;
    let rho = rho2.sqrt();
    if rho <= EPS_RANGE {
        return Err(Error::DegenerateGeometry(
            "transmitter on the body zenith axis",
        ));
    }
    let r2 = range * range;

    // d(range)/d(vt) is the world-frame unit direction; the angle rows are
    // gradients in body coordinates mapped back through d(body)/d(vt) = R.
    let range_row = RowVector3::new(delta.x / range, delta.y / range, delta.z / range);
    let az_body = RowVector3::new(-body.y / rho2, body.x / rho2, 0.0);
    let el_body = RowVector3::new(
        -body.x * body.z / (r2 * rho),
        -body.y * body.z / (r2 * rho),
        rho / r2,
    );
    Ok(Matrix3::from_rows(&[
        range_row,
        az_body * rot,
        el_body * rot,
    ]))
}

/// The unique transmitter position that reproduces `z` when observed from
/// `pose` (inverse of [`predict_measurement`]).
pub fn invert_measurement(z: &MpcMeasurement, pose: &Pose) -> Vector3<f64> {
    let (sa, ca) = z.azimuth.sin_cos();
    let (se, ce) = z.elevation.sin_cos();
    let body = z.range * Vector3::new(ce * ca, ce * sa, se);
    pose.position + pose.rotation().transpose() * body
}

/// Jacobian of [`invert_measurement`] with respect to the measurement
/// `(range, azimuth, elevation)`; columns in that order.
pub fn inverse_measurement_jacobian(z: &MpcMeasurement, pose: &Pose) -> Matrix3<f64> {
    let (sa, ca) = z.azimuth.sin_cos();
    let (se, ce) = z.elevation.sin_cos();
    let d = z.range;
    let body_jac = Matrix3::new(
        ce * ca,
        -d * ce * sa,
        -d * se * ca,
        ce * sa,
        d * ce * ca,
        -d * se * sa,
        se,
        0.0,
        d * ce,
    );
    pose.rotation().transpose() * body_jac
}

/// Point on the reflecting surface implied by a first-order reflection: the
/// intersection of the segment from the virtual transmitter `vt` to the
/// `vehicle` with the perpendicular bisector plane of `bs`-`vt`.
pub fn reflector_point(
    vt: &Vector3<f64>,
    bs: &Vector3<f64>,
    vehicle: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let normal = vt - bs;
    if normal.norm() <= EPS_RANGE {
        return Err(Error::LosPath);
    }
    let midpoint = 0.5 * (bs + vt);
    let dir = vehicle - vt;
    let denom = normal.dot(&dir);
    if denom.abs() <= EPS_RANGE * normal.norm() {
        return Err(Error::NoIntersection);
    }
    let s = normal.dot(&(midpoint - vt)) / denom;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::NoIntersection);
    }
    Ok(vt + s * dir)
}
