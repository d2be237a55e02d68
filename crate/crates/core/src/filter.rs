//! The extended FastSLAM filter.
//!
//! Each particle carries a pose hypothesis, an independent VT map per
//! (port, base station) group, and a static per-base-station range bias. A
//! snapshot update proposes poses from the motion model, associates and maps
//! each group separately, accumulates the per-association Gaussian
//! log-likelihoods into the importance weight, and resamples systematically
//! when the effective sample size collapses.
//!
//! Determinism contract: every particle slot owns a ChaCha stream derived
//! from `(seed, slot index)`, particle updates are independent, and all
//! reductions run in slot order, so results are bit-identical for any worker
//! thread count.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{associate, log_likelihood, mahalanobis2, VtPrediction};
use crate::geometry::{
    measurement_jacobian, predict_measurement, wrap_angle, MpcMeasurement, Pose,
};
use crate::motion::{sample_motion, MotionNoise, VelocityInput};
use crate::rng;
use crate::vt_map::{
    ekf_update, init_vt, measurement_covariance, miss, prune_or_confirm, ConfirmationPolicy,
    MeasurementNoiseModel, VirtualTransmitter, VtFate, VtStatus,
};
use crate::{Error, Result};

/// Measurement group key: (base station index, antenna port index).
pub type GroupKey = (u32, u32);

/// All multipath components of one snapshot, grouped by (bs, port).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    /// Snapshot index; strictly increasing across a log.
    pub t: u64,
    /// Components per group: measurement plus linear SNR.
    pub groups: BTreeMap<GroupKey, Vec<(MpcMeasurement, f64)>>,
}

/// Filter tuning and problem layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Particle count N.
    pub particles: usize,
    /// Proposal noise on the velocity channels.
    pub motion_noise: MotionNoise,
    /// SNR-scaled measurement covariance model.
    pub measurement_noise: MeasurementNoiseModel,
    /// Mahalanobis gate for association (chi-square, 3 DOF).
    pub gate: f64,
    /// Resample when ESS falls below this fraction of N.
    pub resample_threshold: f64,
    /// Prior standard deviation of the per-BS range bias, m.
    pub bias_prior_std_m: f64,
    /// Candidate confirmation / retirement thresholds.
    pub confirmation: ConfirmationPolicy,
    /// The (bs, port) grid the filter maintains maps for.
    pub groups: Vec<GroupKey>,
    /// Master seed for all filter randomness.
    pub seed: u64,
    /// Retain per-particle pose histories.
    pub keep_trajectory: bool,
}

impl FilterConfig {
    /// Defaults sized for the built-in two-BS, two-port scenario.
    pub fn new(groups: Vec<GroupKey>, seed: u64) -> Self {
        Self {
            particles: 512,
            motion_noise: MotionNoise::zero(),
            measurement_noise: MeasurementNoiseModel::new(3.0, 0.035, 0.035, 100.0),
            gate: crate::association::DEFAULT_GATE,
            resample_threshold: 0.5,
            bias_prior_std_m: 0.0,
            confirmation: ConfirmationPolicy::default(),
            groups,
            seed,
            keep_trajectory: false,
        }
    }
}

/// One trajectory/map hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    /// Pose history, filled only when the config asks for it.
    pub trajectory: Vec<Pose>,
    /// Independent VT list per (bs, port) group.
    pub maps: BTreeMap<GroupKey, Vec<VirtualTransmitter>>,
    /// Static range bias per base station, m.
    pub bias: BTreeMap<u32, f64>,
    pub log_weight: f64,
    /// Next VT id to assign at birth.
    next_vt_id: u64,
}

/// One association made by the reference particle, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssociationRecord {
    pub t: u64,
    pub bs: u32,
    pub port: u32,
    pub vt_id: u64,
    pub measurement_index: usize,
    /// Bias-corrected measured range, m.
    pub range_m: f64,
    pub mahalanobis2: f64,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub t: u64,
    pub ess: f64,
    pub resampled: bool,
    /// Associations of the highest-weight particle (before resampling).
    pub associations: Vec<AssociationRecord>,
}

/// Point estimate extracted from the particle set.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Weighted mean position with circular-mean angles.
    pub pose: Pose,
    /// VT maps of the highest-weight particle.
    pub maps: BTreeMap<GroupKey, Vec<VirtualTransmitter>>,
}

/// Effective sample size of a log-weight vector, `1 / sum(w_bar^2)`.
pub fn effective_sample_size(log_weights: &[f64]) -> Result<f64> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllWeightsDegenerate);
    }
    let mut total = 0.0;
    let mut total_sq = 0.0;
    for &lw in log_weights {
        let w = (lw - max).exp(); // -inf maps to 0
        total += w;
        total_sq += w * w;
    }
    Ok(total * total / total_sq)
}

/// Systematic (low-variance) resampling: offspring slot `i` follows the
/// cumulative weight just past `(i + u) / n` for a single uniform `u`.
pub fn systematic_resample_indices(normalized_weights: &[f64], u: f64) -> Vec<usize> {
    let n = normalized_weights.len();
    debug_assert!((0.0..1.0).contains(&u));
    let mut indices = Vec::with_capacity(n);
    let mut cumulative = normalized_weights[0];
    let mut j = 0;
    for i in 0..n {
        let target = (i as f64 + u) / n as f64;
        while cumulative <= target && j + 1 < n {
            j += 1;
            cumulative += normalized_weights[j];
        }
        indices.push(j);
    }
    indices
}

/// Normalizes log weights into linear weights summing to one.
fn normalize_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllWeightsDegenerate);
    }
    let mut w: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    Ok(w)
}

/// The particle filter.
pub struct Filter {
    config: FilterConfig,
    particles: Vec<Particle>,
    /// Per-slot motion streams; they stay with the slot across resampling.
    streams: Vec<ChaCha8Rng>,
    resample_rng: ChaCha8Rng,
}

impl Filter {
    /// Places all particles at `pose0` with empty maps and sampled biases.
    pub fn new(config: FilterConfig, pose0: Pose) -> Self {
        let mut streams: Vec<ChaCha8Rng> = (0..config.particles)
            .map(|i| rng::stream(config.seed, "particle", i as u64))
            .collect();
        let mut bs_ids: Vec<u32> = config.groups.iter().map(|g| g.0).collect();
        bs_ids.sort_unstable();
        bs_ids.dedup();
        let particles = streams
            .iter_mut()
            .map(|stream| {
                let mut bias = BTreeMap::new();
                for &k in &bs_ids {
                    let g: f64 = stream.sample(StandardNormal);
                    bias.insert(k, config.bias_prior_std_m * g);
                }
                let maps = config.groups.iter().map(|&g| (g, Vec::new())).collect();
                Particle {
                    pose: pose0,
                    trajectory: if config.keep_trajectory {
                        vec![pose0]
                    } else {
                        Vec::new()
                    },
                    maps,
                    bias,
                    log_weight: 0.0,
                    next_vt_id: 0,
                }
            })
            .collect();
        let resample_rng = rng::stream(config.seed, "resample", 0);
        Self {
            config,
            particles,
            streams,
            resample_rng,
        }
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// Advances the filter by one snapshot.
    pub fn step(&mut self, u: &VelocityInput, dt: f64, snapshot: &Snapshot) -> Result<StepSummary> {
        let config = &self.config;
        let records: Vec<Vec<AssociationRecord>> = self
            .particles
            .par_iter_mut()
            .zip(self.streams.par_iter_mut())
            .map(|(particle, stream)| {
                particle.pose = sample_motion(&particle.pose, u, dt, &config.motion_noise, stream);
                if config.keep_trajectory {
                    particle.trajectory.push(particle.pose);
                }
                match update_particle_maps(particle, snapshot, config) {
                    Ok(records) => records,
                    Err(_) => {
                        // A numerically failed hypothesis is disqualified, not fatal.
                        particle.log_weight = f64::NEG_INFINITY;
                        Vec::new()
                    }
                }
            })
            .collect();

        let log_weights: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        let ess = effective_sample_size(&log_weights)?;
        let best = argmax_weight(&log_weights);
        let associations = records.into_iter().nth(best).unwrap_or_default();

        let resampled = ess < self.config.resample_threshold * self.config.particles as f64;
        if resampled {
            self.resample()?;
        }

        Ok(StepSummary {
            t: snapshot.t,
            ess,
            resampled,
            associations,
        })
    }

    /// Systematic resampling; weights reset to uniform, maps deep-copied.
    pub fn resample(&mut self) -> Result<()> {
        let log_weights: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        let weights = normalize_weights(&log_weights)?;
        let u: f64 = self.resample_rng.gen::<f64>();
        let indices = systematic_resample_indices(&weights, u);
        self.particles = indices
            .iter()
            .map(|&i| Particle {
                log_weight: 0.0,
                ..self.particles[i].clone()
            })
            .collect();
        Ok(())
    }

    /// Weighted-mean pose (circular means for angles) plus the best
    /// particle's VT maps.
    pub fn estimate(&self) -> Estimate {
        let log_weights: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        let weights = normalize_weights(&log_weights)
            .unwrap_or_else(|_| vec![1.0 / self.particles.len() as f64; self.particles.len()]);

        let mut position = Vector3::zeros();
        let mut yaw = (0.0, 0.0);
        let mut pitch = (0.0, 0.0);
        let mut roll = (0.0, 0.0);
        for (particle, &w) in self.particles.iter().zip(&weights) {
            position += w * particle.pose.position;
            yaw = (
                yaw.0 + w * particle.pose.yaw.sin(),
                yaw.1 + w * particle.pose.yaw.cos(),
            );
            pitch = (
                pitch.0 + w * particle.pose.pitch.sin(),
                pitch.1 + w * particle.pose.pitch.cos(),
            );
            roll = (
                roll.0 + w * particle.pose.roll.sin(),
                roll.1 + w * particle.pose.roll.cos(),
            );
        }
        let pose = Pose::new(
            position,
            yaw.0.atan2(yaw.1),
            pitch.0.atan2(pitch.1),
            roll.0.atan2(roll.1),
        );
        let best = argmax_weight(&log_weights);
        Estimate {
            pose,
            maps: self.particles[best].maps.clone(),
        }
    }
}

fn argmax_weight(log_weights: &[f64]) -> usize {
    let mut best = 0;
    for (i, &w) in log_weights.iter().enumerate() {
        if w > log_weights[best] {
            best = i;
        }
    }
    best
}

/// Associates, maps and weighs one particle against one snapshot.
///
/// Equivalent to chaining the public `associate` / `ekf_update` /
/// `log_likelihood` operations, but computes each (VT, measurement) pair's
/// innovation factorization once and reuses the association-time
/// linearization for the EKF correction.
fn update_particle_maps(
    particle: &mut Particle,
    snapshot: &Snapshot,
    config: &FilterConfig,
) -> Result<Vec<AssociationRecord>> {
    let mut records = Vec::new();
    let rotation = particle.pose.rotation();
    for (&(bs, port), vts) in particle.maps.iter_mut() {
        let Some(mpcs) = snapshot.groups.get(&(bs, port)) else {
            continue;
        };
        if mpcs.is_empty() {
            continue;
        }
        let bias = particle.bias.get(&bs).copied().unwrap_or(0.0);
        let measurements: Vec<(MpcMeasurement, f64)> = mpcs
            .iter()
            .map(|&(z, snr)| {
                (
                    MpcMeasurement::new(z.range - bias, wrap_angle(z.azimuth), z.elevation),
                    snr,
                )
            })
            .collect();
        let q_per_meas = measurements
            .iter()
            .map(|(_, snr)| measurement_covariance(&config.measurement_noise, *snr))
            .collect::<Result<Vec<_>>>()?;

        let linearized = vts
            .iter()
            .map(|vt| {
                let h = jacobian_with_rotation(&vt.mean, &particle.pose.position, &rotation)?;
                let predicted =
                    predict_with_rotation(&vt.mean, &particle.pose.position, &rotation)?;
                Ok((h, predicted, h * vt.covariance * h.transpose()))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut costs = vec![vec![0.0; measurements.len()]; vts.len()];
        let mut log_liks = vec![vec![0.0; measurements.len()]; vts.len()];
        for (l, (_, predicted, projected)) in linearized.iter().enumerate() {
            for (m, (z, _)) in measurements.iter().enumerate() {
                let s = projected + q_per_meas[m];
                let (m2, ll) = cost_and_log_likelihood(z, predicted, &s)?;
                costs[l][m] = m2;
                log_liks[l][m] = ll;
            }
        }
        let assignment = gated_assignment(&costs, config.gate);

        for &(l, m) in &assignment.pairs {
            let (z, _) = measurements[m];
            let (h, predicted, _) = &linearized[l];
            particle.log_weight += log_liks[l][m];
            vts[l] = ekf_update_linearized(&vts[l], h, predicted, &z, &q_per_meas[m])?;
            records.push(AssociationRecord {
                t: snapshot.t,
                bs,
                port,
                vt_id: vts[l].id,
                measurement_index: m,
                range_m: z.range,
                mahalanobis2: costs[l][m],
            });
        }
        for &l in &assignment.unmatched_vts {
            vts[l] = miss(&vts[l]);
        }
        for &m in &assignment.unmatched_measurements {
            let (z, snr) = measurements[m];
            let vt = init_vt(
                &z,
                snr,
                &particle.pose,
                &config.measurement_noise,
                port,
                bs,
                particle.next_vt_id,
            )?;
            particle.next_vt_id += 1;
            vts.push(vt);
        }

        vts.retain_mut(|vt| match prune_or_confirm(vt, &config.confirmation) {
            VtFate::KeepCandidate => true,
            VtFate::Promote => {
                vt.status = VtStatus::Confirmed;
                true
            }
            VtFate::Drop => false,
        });
    }
    Ok(records)
}
