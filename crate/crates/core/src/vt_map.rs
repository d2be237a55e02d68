//! Per-landmark Gaussian posteriors.
//!
//! Each virtual transmitter is a 3-D Gaussian conditioned on one particle's
//! trajectory: initialized by inverting the first measurement, refined by a
//! standard EKF whenever an associated measurement arrives, frozen on misses,
//! and promoted/retired by a hit/miss confirmation rule.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    self, inverse_measurement_jacobian, invert_measurement, measurement_jacobian,
    predict_measurement, wrap_angle, MpcMeasurement, Pose,
};
use crate::{Error, Result};

/// Lifecycle state of a virtual transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VtStatus {
    Candidate,
    Confirmed,
}

/// One virtual transmitter: Gaussian position estimate plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualTransmitter {
    /// Stable identifier within its particle (birth order).
    pub id: u64,
    /// Position mean, m, world frame.
    pub mean: Vector3<f64>,
    /// Position covariance, m^2; symmetric positive-definite.
    pub covariance: Matrix3<f64>,
    /// Antenna port index the landmark belongs to.
    pub port: u32,
    /// Base-station index the landmark belongs to.
    pub bs: u32,
    /// Snapshots with an associated measurement.
    pub hits: u32,
    /// Snapshots where the group was observed but nothing associated.
    pub misses: u32,
    pub status: VtStatus,
}

/// SNR-scaled diagonal measurement covariance.
///
/// The base diagonal `(sigma_d^2, sigma_az^2, sigma_el^2)` applies at
/// `snr_ref`; a component with twice the SNR gets half the variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoiseModel {
    /// Base variances (m^2, rad^2, rad^2).
    pub base_diag: Vector3<f64>,
    /// Linear SNR at which the base variances apply.
    pub snr_ref: f64,
}

impl MeasurementNoiseModel {
    pub fn new(range_std_m: f64, azimuth_std_rad: f64, elevation_std_rad: f64, snr_ref: f64) -> Self {
        Self {
            base_diag: Vector3::new(
                range_std_m * range_std_m,
                azimuth_std_rad * azimuth_std_rad,
                elevation_std_rad * elevation_std_rad,
            ),
            snr_ref,
        }
    }
}

/// Measurement covariance for one component observed at linear SNR `snr`.
pub fn measurement_covariance(model: &MeasurementNoiseModel, snr: f64) -> Result<Matrix3<f64>> {
    if !(snr > 0.0) {
        return Err(Error::InvalidSnr(snr));
    }
    Ok(Matrix3::from_diagonal(&(model.base_diag * (model.snr_ref / snr))))
}

/// Births a candidate VT from a single measurement: the mean is the inverted
/// measurement and the covariance is the measurement covariance pushed
/// through the inverse-measurement Jacobian.
pub fn init_vt(
    z: &MpcMeasurement,
    snr: f64,
    pose: &Pose,
    model: &MeasurementNoiseModel,
    port: u32,
    bs: u32,
    id: u64,
) -> Result<VirtualTransmitter> {
    if z.range <= geometry::EPS_RANGE {
        return Err(Error::DegenerateGeometry("measurement range below threshold"));
    }
    let q = measurement_covariance(model, snr)?;
    let g = inverse_measurement_jacobian(z, pose);
    Ok(VirtualTransmitter {
        id,
        mean: invert_measurement(z, pose),
        covariance: g * q * g.transpose(),
        port,
        bs,
        hits: 1,
        misses: 0,
        status: VtStatus::Candidate,
    })
}

/// Innovation with wrapped angle residuals. The measured angles are
/// normalized before differencing, so an input shifted by a whole turn maps
/// onto the same residual.
pub(crate) fn innovation(z: &MpcMeasurement, predicted: &MpcMeasurement) -> Vector3<f64> {
    Vector3::new(
        z.range - predicted.range,
        wrap_angle(wrap_angle(z.azimuth) - predicted.azimuth),
        wrap_angle(wrap_angle(z.elevation) - predicted.elevation),
    )
}

/// One EKF correction given the linearized model: returns the mean shift and
/// the symmetrized posterior covariance.
pub(crate) fn kalman_step(
    h: &Matrix3<f64>,
    sigma: &Matrix3<f64>,
    q_t: &Matrix3<f64>,
    nu: &Vector3<f64>,
) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let s = h * sigma * h.transpose() + q_t;
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
    let gain = sigma * h.transpose() * s_inv;
    let posterior = (Matrix3::identity() - gain * h) * sigma;
    Ok((gain * nu, 0.5 * (posterior + posterior.transpose())))
}

/// EKF update of a VT with an associated measurement.
pub fn ekf_update(
    vt: &VirtualTransmitter,
    z: &MpcMeasurement,
    pose: &Pose,
    q_t: &Matrix3<f64>,
) -> Result<VirtualTransmitter> {
    let h = measurement_jacobian(&vt.mean, pose)?;
    let predicted = predict_measurement(&vt.mean, pose)?;
    ekf_update_linearized(vt, &h, &predicted, z, q_t)
}

/// [`ekf_update`] with the linearization already at hand; the hot path feeds
/// the `H` and `h(mean)` it computed for association.
pub(crate) fn ekf_update_linearized(
    vt: &VirtualTransmitter,
    h: &Matrix3<f64>,
    predicted: &MpcMeasurement,
    z: &MpcMeasurement,
    q_t: &Matrix3<f64>,
) -> Result<VirtualTransmitter> {
    let nu = innovation(z, predicted);
    let (shift, covariance) = kalman_step(h, &vt.covariance, q_t, &nu)?;
    Ok(VirtualTransmitter {
        mean: vt.mean + shift,
        covariance,
        hits: vt.hits + 1,
        ..vt.clone()
    })
}

/// Records an in-view snapshot without an associated measurement; the
/// Gaussian is left untouched.
pub fn miss(vt: &VirtualTransmitter) -> VirtualTransmitter {
    VirtualTransmitter {
        misses: vt.misses + 1,
        ..vt.clone()
    }
}

/// Hit/miss thresholds for candidate confirmation and retirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationPolicy {
    /// Hits needed to confirm a candidate.
    pub confirm_hits: u32,
    /// Opportunities (hits + misses) within which they must occur.
    pub confirm_window: u32,
    /// Misses that retire an unconfirmed candidate.
    pub max_misses: u32,
}

impl Default for ConfirmationPolicy {
    fn default() -> Self {
        Self {
            confirm_hits: 3,
            confirm_window: 5,
            max_misses: 3,
        }
    }
}

/// Lifecycle decision for one VT after a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtFate {
    KeepCandidate,
    Promote,
    Drop,
}

/// Applies the M-of-N confirmation rule. Confirmed VTs are never dropped.
pub fn prune_or_confirm(vt: &VirtualTransmitter, policy: &ConfirmationPolicy) -> VtFate {
    if vt.status == VtStatus::Confirmed {
        return VtFate::KeepCandidate;
    }
    if vt.hits >= policy.confirm_hits && vt.hits + vt.misses <= policy.confirm_window {
        VtFate::Promote
    } else if vt.misses >= policy.max_misses {
        VtFate::Drop
    } else {
        VtFate::KeepCandidate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn model() -> MeasurementNoiseModel {
        MeasurementNoiseModel::new(1.0, 0.1, 0.1, 100.0)
    }

    fn sample_vt(mean: Vector3<f64>, cov: Matrix3<f64>) -> VirtualTransmitter {
        VirtualTransmitter {
            id: 0,
            mean,
            covariance: cov,
            port: 0,
            bs: 0,
            hits: 1,
            misses: 0,
            status: VtStatus::Candidate,
        }
    }

    #[test]
    fn covariance_at_reference_snr_is_base() {
        let m = model();
        let q = measurement_covariance(&m, 100.0).unwrap();
        assert_eq!(q, Matrix3::from_diagonal(&m.base_diag));
    }

    #[test]
    fn covariance_scales_inversely_with_snr() {
        let m = MeasurementNoiseModel {
            base_diag: Vector3::new(1.0, 0.01, 0.01),
            snr_ref: 50.0,
        };
        let q = measurement_covariance(&m, 200.0).unwrap();
        assert!((q[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((q[(1, 1)] - 0.0025).abs() < 1e-15);
        assert!((q[(2, 2)] - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn zero_snr_is_rejected() {
        assert!(matches!(
            measurement_covariance(&model(), 0.0),
            Err(Error::InvalidSnr(_))
        ));
    }

    #[test]
    fn birth_on_axis_lands_on_the_measurement_ray() {
        let vt = init_vt(
            &MpcMeasurement::new(10.0, 0.0, 0.0),
            100.0,
            &Pose::origin(),
            &model(),
            1,
            0,
            7,
        )
        .unwrap();
        assert!((vt.mean - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!((vt.hits, vt.misses, vt.status), (1, 0, VtStatus::Candidate));
        assert_eq!(vt.id, 7);
    }

    #[test]
    fn birth_covariance_projects_back_to_measurement_covariance() {
        let pose = Pose::new(Vector3::new(2.0, -1.0, 0.5), 0.7, 0.05, -0.2);
        let z = MpcMeasurement::new(80.0, 0.9, 0.1);
        let snr = 40.0;
        let vt = init_vt(&z, snr, &pose, &model(), 0, 0, 0).unwrap();
        let h = measurement_jacobian(&vt.mean, &pose).unwrap();
        let q = measurement_covariance(&model(), snr).unwrap();
        let projected = h * vt.covariance * h.transpose();
        assert!((projected - q).norm() / q.norm() < 1e-6);
    }

    #[test]
    fn birth_is_deterministic() {
        let z = MpcMeasurement::new(25.0, -1.2, 0.3);
        let a = init_vt(&z, 10.0, &Pose::origin(), &model(), 0, 1, 3).unwrap();
        let b = init_vt(&z, 10.0, &Pose::origin(), &model(), 0, 1, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_innovation_keeps_mean_and_contracts_covariance() {
        let pose = Pose::origin();
        let vt = sample_vt(Vector3::new(30.0, 12.0, 4.0), Matrix3::identity() * 4.0);
        let z = predict_measurement(&vt.mean, &pose).unwrap();
        let q = measurement_covariance(&model(), 100.0).unwrap();
        let updated = ekf_update(&vt, &z, &pose, &q).unwrap();
        assert_eq!(updated.mean, vt.mean);
        assert!(updated.covariance.trace() < vt.covariance.trace());
        assert_eq!(updated.hits, vt.hits + 1);
    }

    #[test]
    fn identity_linearization_halves_the_innovation() {
        // H = I, Sigma = I, Q = I gives K = I/2 directly from the gain formula.
        let nu = Vector3::new(0.4, -0.2, 0.6);
        let (shift, cov) = kalman_step(
            &Matrix3::identity(),
            &Matrix3::identity(),
            &Matrix3::identity(),
            &nu,
        )
        .unwrap();
        assert!((shift - 0.5 * nu).norm() < 1e-15);
        assert!((cov - 0.5 * Matrix3::<f64>::identity()).norm() < 1e-15);
    }

    #[test]
    fn azimuth_shifted_by_two_pi_gives_identical_posterior() {
        let pose = Pose::origin();
        let vt = sample_vt(Vector3::new(40.0, 25.0, 6.0), Matrix3::identity() * 9.0);
        let q = measurement_covariance(&model(), 100.0).unwrap();
        let z = MpcMeasurement::new(48.0, 0.5, 0.1);
        let z_shifted = MpcMeasurement::new(48.0, 0.5 - 2.0 * std::f64::consts::PI, 0.1);
        let a = ekf_update(&vt, &z, &pose, &q).unwrap();
        let b = ekf_update(&vt, &z_shifted, &pose, &q).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.covariance, b.covariance);
    }

    #[test]
    fn updates_preserve_positive_definiteness_and_contract_trace() {
        let mut rng = StdRng::seed_from_u64(21);
        let m = model();
        for _ in 0..10_000 {
            let pose = Pose::new(
                Vector3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), 0.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-1.0..1.0),
            );
            let mean = Vector3::new(
                rng.gen_range(30.0..300.0) * rng.gen_range(-1.0f64..1.0).signum(),
                rng.gen_range(30.0..300.0) * rng.gen_range(-1.0f64..1.0).signum(),
                rng.gen_range(-40.0..40.0),
            );
            let spread: f64 = rng.gen_range(0.5..20.0);
            let vt = sample_vt(mean, Matrix3::identity() * spread * spread);
            let truth = predict_measurement(&mean, &pose).unwrap();
            let z = MpcMeasurement::new(
                truth.range + rng.gen_range(-3.0..3.0),
                wrap_angle(truth.azimuth + rng.gen_range(-0.1..0.1)),
                truth.elevation + rng.gen_range(-0.1..0.1),
            );
            let q = measurement_covariance(&m, rng.gen_range(10.0..1000.0)).unwrap();
            let updated = ekf_update(&vt, &z, &pose, &q).unwrap();
            assert!(updated.covariance.trace() <= vt.covariance.trace() + 1e-9);
            assert!(
                nalgebra::Cholesky::new(updated.covariance).is_some(),
                "posterior covariance lost positive definiteness"
            );
        }
    }

    /// Brute-force Bayesian posterior on a 3-D lattice, used as an oracle for
    /// the EKF covariance in a small-noise, mildly nonlinear case.
    #[test]
    fn posterior_covariance_matches_grid_filter() {
        let pose = Pose::origin();
        let prior_mean = Vector3::new(25.0, 6.0, 3.0);
        let prior_sigma: f64 = 0.5;
        let prior_cov = Matrix3::identity() * prior_sigma * prior_sigma;
        let noise = MeasurementNoiseModel::new(0.5, 0.01, 0.01, 1.0);
        let q = measurement_covariance(&noise, 1.0).unwrap();
        let q_inv = q.try_inverse().unwrap();

        // Slightly off-prior measurement keeps the problem nontrivial.
        let true_vt = Vector3::new(25.3, 5.8, 3.1);
        let z = predict_measurement(&true_vt, &pose).unwrap();

        let vt = sample_vt(prior_mean, prior_cov);
        let updated = ekf_update(&vt, &z, &pose, &q).unwrap();

        // Numerical posterior moments over a +/-4 sigma lattice.
        let half_width = 4.0 * prior_sigma;
        let n = 41;
        let step = 2.0 * half_width / (n - 1) as f64;
        let mut total = 0.0;
        let mut mean = Vector3::zeros();
        let mut second = Matrix3::zeros();
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let p = prior_mean
                        + Vector3::new(
                            -half_width + ix as f64 * step,
                            -half_width + iy as f64 * step,
                            -half_width + iz as f64 * step,
                        );
                    let dp = p - prior_mean;
                    let prior_exp = -0.5 * dp.norm_squared() / (prior_sigma * prior_sigma);
                    let pred = predict_measurement(&p, &pose).unwrap();
                    let nu = innovation(&z, &pred);
                    let like_exp = -0.5 * (nu.transpose() * q_inv * nu)[(0, 0)];
                    let w = (prior_exp + like_exp).exp();
                    total += w;
                    mean += w * p;
                    second += w * p * p.transpose();
                }
            }
        }
        mean /= total;
        second /= total;
        let grid_cov = second - mean * mean.transpose();

        let rel = (updated.covariance - grid_cov).norm() / grid_cov.norm();
        assert!(rel < 0.05, "EKF vs grid covariance relative error {rel}");
        assert!((updated.mean - mean).norm() < 0.05);
    }

    #[test]
    fn miss_freezes_the_gaussian() {
        let vt = sample_vt(Vector3::new(10.0, 0.0, 0.0), Matrix3::identity());
        let missed = miss(&vt);
        assert_eq!(missed.mean, vt.mean);
        assert_eq!(missed.covariance, vt.covariance);
        assert_eq!(missed.misses, vt.misses + 1);
        assert_eq!(missed.status, vt.status);
        let again = miss(&missed);
        assert_eq!(again.mean, vt.mean);
        assert_eq!(again.covariance, vt.covariance);
    }

    #[test]
    fn confirmation_rule_cases() {
        let policy = ConfirmationPolicy::default();
        let mut vt = sample_vt(Vector3::new(10.0, 0.0, 0.0), Matrix3::identity());

        vt.hits = 3;
        vt.misses = 0;
        assert_eq!(prune_or_confirm(&vt, &policy), VtFate::Promote);

        vt.hits = 1;
        vt.misses = 3;
        assert_eq!(prune_or_confirm(&vt, &policy), VtFate::Drop);

        vt.hits = 2;
        vt.misses = 2;
        assert_eq!(prune_or_confirm(&vt, &policy), VtFate::KeepCandidate);

        vt.status = VtStatus::Confirmed;
        vt.misses = 100;
        assert_eq!(prune_or_confirm(&vt, &policy), VtFate::KeepCandidate);
    }
}
