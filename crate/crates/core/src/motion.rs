//! Vehicle kinematics: deterministic velocity integration and the noisy
//! motion model the particle proposal samples from.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

/// Body-frame velocity input for one snapshot interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityInput {
    /// Longitudinal, lateral, vertical velocity, m/s, body frame.
    pub linear: Vector3<f64>,
    /// Yaw, pitch, roll rates, rad/s.
    pub angular: Vector3<f64>,
}

impl VelocityInput {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Order: longitudinal, lateral, vertical, yaw rate, pitch rate, roll rate.
    pub fn from_array(u: [f64; 6]) -> Self {
        Self::new(
            Vector3::new(u[0], u[1], u[2]),
            Vector3::new(u[3], u[4], u[5]),
        )
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        ]
    }
}

/// Standard deviation per velocity channel, same layout as [`VelocityInput`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise {
    pub linear_std: Vector3<f64>,
    pub angular_std: Vector3<f64>,
}

impl MotionNoise {
    pub fn new(linear_std: Vector3<f64>, angular_std: Vector3<f64>) -> Self {
        Self {
            linear_std,
            angular_std,
        }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Planar vehicle: longitudinal and yaw-rate noise only.
    pub fn planar(longitudinal_std: f64, yaw_rate_std: f64) -> Self {
        Self::new(
            Vector3::new(longitudinal_std, 0.0, 0.0),
            Vector3::new(yaw_rate_std, 0.0, 0.0),
        )
    }
}

/// Forward-Euler pose update over `dt` seconds.
///
/// The attitude advances by `angular * dt`; the position advances by the body
/// velocity rotated into the world frame with the pre-update attitude.
pub fn integrate(prev: &Pose, u: &VelocityInput, dt: f64) -> Pose {
    debug_assert!(dt > 0.0);
    let world_velocity = prev.rotation().transpose() * u.linear;
    Pose::new(
        prev.position + world_velocity * dt,
        prev.yaw + u.angular.x * dt,
        prev.pitch + u.angular.y * dt,
        prev.roll + u.angular.z * dt,
    )
}

/// Draws a velocity perturbed by independent Gaussian noise per channel and
/// integrates it. Consumes exactly six standard-normal draws from `rng`.
pub fn sample_motion<R: Rng>(
    prev: &Pose,
    u: &VelocityInput,
    dt: f64,
    noise: &MotionNoise,
    rng: &mut R,
) -> Pose {
    let mut draw = |sigma: f64| {
        let g: f64 = rng.sample(StandardNormal);
        sigma * g
    };
    let noisy = VelocityInput::new(
        Vector3::new(
            u.linear.x + draw(noise.linear_std.x),
            u.linear.y + draw(noise.linear_std.y),
            u.linear.z + draw(noise.linear_std.z),
        ),
        Vector3::new(
            u.angular.x + draw(noise.angular_std.x),
            u.angular.y + draw(noise.angular_std.y),
            u.angular.z + draw(noise.angular_std.z),
        ),
    );
    integrate(prev, &noisy, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::PI;

    #[test]
    fn zero_velocity_leaves_pose_unchanged() {
        let pose = Pose::new(Vector3::new(1.0, 2.0, 3.0), 0.3, 0.1, -0.2);
        let next = integrate(&pose, &VelocityInput::zero(), 0.5);
        assert_eq!(next, pose);
    }

    #[test]
    fn longitudinal_step_advances_along_world_x() {
        let u = VelocityInput::from_array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let next = integrate(&Pose::origin(), &u, 0.075);
        assert!((next.position - Vector3::new(0.075, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(next.yaw, 0.0);
    }

    #[test]
    fn pure_yaw_rate_spins_in_place() {
        let u = VelocityInput::from_array([0.0, 0.0, 0.0, PI, 0.0, 0.0]);
        let next = integrate(&Pose::origin(), &u, 0.075);
        assert!((next.yaw - 0.075 * PI).abs() < 1e-15);
        assert_eq!(next.position, Vector3::zeros());
    }

    #[test]
    fn planar_motion_stays_planar_exactly() {
        let mut pose = Pose::origin();
        let u = VelocityInput::from_array([1.0, 0.2, 0.0, 0.4, 0.0, 0.0]);
        for _ in 0..1000 {
            pose = integrate(&pose, &u, 0.075);
            assert_eq!(pose.position.z, 0.0);
            assert_eq!(pose.pitch, 0.0);
            assert_eq!(pose.roll, 0.0);
        }
    }

    #[test]
    fn zero_noise_sampling_equals_integration() {
        let mut rng = stream(9, "motion", 0);
        let u = VelocityInput::from_array([1.0, 0.0, 0.0, 0.2, 0.0, 0.0]);
        let pose = Pose::new(Vector3::new(5.0, -2.0, 0.0), 1.0, 0.0, 0.0);
        let sampled = sample_motion(&pose, &u, 0.075, &MotionNoise::zero(), &mut rng);
        assert_eq!(sampled, integrate(&pose, &u, 0.075));
    }

    #[test]
    fn sampling_is_reproducible_for_a_fixed_seed() {
        let u = VelocityInput::from_array([1.0, 0.0, 0.0, 0.2, 0.0, 0.0]);
        let noise = MotionNoise::planar(0.2, 0.05);
        let a = sample_motion(&Pose::origin(), &u, 0.075, &noise, &mut stream(7, "m", 3));
        let b = sample_motion(&Pose::origin(), &u, 0.075, &noise, &mut stream(7, "m", 3));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_converges_to_commanded_displacement() {
        let mut rng = stream(11, "mc", 0);
        let u = VelocityInput::from_array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let noise = MotionNoise::planar(0.1, 0.0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_motion(&Pose::origin(), &u, 1.0, &noise, &mut rng).position.x;
        }
        let mean = sum / n as f64;
        let bound = 3.0 * 0.1 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < bound, "mean {mean} outside {bound}");
    }
}
