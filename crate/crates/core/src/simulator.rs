//! Scenario simulator: ground truth plus synthetic multipath measurements.
//!
//! A scenario is a handful of base stations, vertical reflecting walls and a
//! driven course. Each base station contributes one line-of-sight virtual
//! transmitter (itself) plus one mirror-image VT per wall; a VT is observable
//! when the implied reflection point falls on its wall. Emitted pseudoranges
//! carry the per-BS clock offset, SNR-dependent Gaussian noise, missed
//! detections and uniform clutter.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::filter::{GroupKey, Snapshot};
use crate::geometry::{predict_measurement, reflector_point, wrap_angle, MpcMeasurement, Pose};
use crate::motion::{integrate, MotionNoise, VelocityInput};
use crate::vt_map::MeasurementNoiseModel;
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Clutter pseudorange bounds, m.
const CLUTTER_RANGE_M: (f64, f64) = (10.0, 800.0);
/// Clutter elevation bounds, rad.
const CLUTTER_ELEVATION_RAD: f64 = PI / 6.0;

/// One transmitting site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStation {
    /// Index k used in measurement groups.
    pub id: u32,
    /// Antenna position, m, world frame.
    pub position: Vector3<f64>,
    /// Cell-id label, for reports only.
    pub cell_id: String,
}

/// A vertical reflecting surface.
///
/// The plane contains the segment `a`-`b` (equal base elevation) and extends
/// `height_m` upward; with `infinite` set, the whole plane reflects and the
/// segment only fixes the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub height_m: f64,
    #[serde(default)]
    pub infinite: bool,
}

impl Wall {
    /// Horizontal unit normal of the wall plane.
    fn normal(&self) -> Result<Vector3<f64>> {
        let along = self.b - self.a;
        let normal = Vector3::new(along.y, -along.x, 0.0);
        let len = normal.norm();
        if len <= 1e-9 {
            return Err(Error::DegenerateWall);
        }
        Ok(normal / len)
    }

    /// Mirror image of `point` across the wall plane.
    pub fn mirror(&self, point: &Vector3<f64>) -> Result<Vector3<f64>> {
        let n = self.normal()?;
        Ok(point - 2.0 * (point - self.a).dot(&n) * n)
    }

    /// Whether a world point (on the wall plane) lies on the reflecting patch.
    fn contains(&self, point: &Vector3<f64>) -> bool {
        if self.infinite {
            return true;
        }
        let along = self.b - self.a;
        let len = along.norm();
        let s = (point - self.a).dot(&along) / (len * len);
        let vertical = point.z - self.a.z;
        (-1e-9..=1.0 + 1e-9).contains(&s) && (-1e-9..=self.height_m + 1e-9).contains(&vertical)
    }
}

/// Log-distance SNR model: `snr(d) = ref_snr_1m * d^-exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrModel {
    pub ref_snr_1m: f64,
    pub path_loss_exponent: f64,
}

impl SnrModel {
    pub fn at_range(&self, range_m: f64) -> f64 {
        self.ref_snr_1m * range_m.powf(-self.path_loss_exponent)
    }

    /// SNR assigned to clutter: the weakest the model produces in range.
    pub fn floor(&self) -> f64 {
        self.at_range(CLUTTER_RANGE_M.1)
    }
}

/// Piecewise course element, driven at the scenario speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum CourseSegment {
    /// Straight leg of the given length, m.
    Straight { length_m: f64 },
    /// Constant-rate turn by `angle_rad` (positive = left) at `radius_m`.
    Turn { radius_m: f64, angle_rad: f64 },
}

/// How the ground-truth trajectory is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Explicit pose list; velocities are recovered by inverse integration.
    Poses(Vec<Pose>),
    /// A driven course: start pose, constant speed, segment list.
    Course {
        start: Pose,
        speed_mps: f64,
        segments: Vec<CourseSegment>,
    },
}

/// Complete simulation scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub base_stations: Vec<BaseStation>,
    pub walls: Vec<Wall>,
    pub trajectory: TrajectorySpec,
    pub snapshot_interval_s: f64,
    /// Antenna ports per base station (J).
    pub ports: u32,
    pub measurement_noise: MeasurementNoiseModel,
    /// Odometry corruption, also the dead-reckoning baseline noise.
    pub motion_noise: MotionNoise,
    /// Mean false alarms per (port, BS) group per snapshot.
    pub clutter_rate: f64,
    pub detection_probability: f64,
    /// Per-BS clock offset, seconds, keyed by BS id.
    pub clock_offsets_s: BTreeMap<u32, f64>,
    pub snr: SnrModel,
}

impl Scenario {
    /// The (bs, port) measurement grid this scenario emits.
    pub fn groups(&self) -> Vec<GroupKey> {
        let mut groups = Vec::new();
        for bs in &self.base_stations {
            for j in 0..self.ports {
                groups.push((bs.id, j));
            }
        }
        groups
    }

    /// Start pose of the trajectory.
    pub fn start_pose(&self) -> Pose {
        match &self.trajectory {
            TrajectorySpec::Poses(poses) => poses.first().copied().unwrap_or_else(Pose::origin),
            TrajectorySpec::Course { start, .. } => *start,
        }
    }

    /// True pose sequence and the per-snapshot velocity inputs driving it:
    /// `integrate(poses[t], u[t], dt) == poses[t + 1]`.
    pub fn truth(&self) -> (Vec<Pose>, Vec<VelocityInput>) {
        let dt = self.snapshot_interval_s;
        match &self.trajectory {
            TrajectorySpec::Poses(poses) => {
                let mut inputs = Vec::with_capacity(poses.len().saturating_sub(1));
                for pair in poses.windows(2) {
                    let (prev, next) = (pair[0], pair[1]);
                    let linear = prev.rotation() * (next.position - prev.position) / dt;
                    let angular = Vector3::new(
                        wrap_angle(next.yaw - prev.yaw) / dt,
                        (next.pitch - prev.pitch) / dt,
                        wrap_angle(next.roll - prev.roll) / dt,
                    );
                    inputs.push(VelocityInput::new(linear, angular));
                }
                (poses.clone(), inputs)
            }
            TrajectorySpec::Course {
                start,
                speed_mps,
                segments,
            } => {
                let mut inputs = Vec::new();
                for segment in segments {
                    match *segment {
                        CourseSegment::Straight { length_m } => {
                            let steps = (length_m / (speed_mps * dt)).round() as usize;
                            let u = VelocityInput::new(
                                Vector3::new(*speed_mps, 0.0, 0.0),
                                Vector3::zeros(),
                            );
                            inputs.extend(std::iter::repeat(u).take(steps));
                        }
                        CourseSegment::Turn {
                            radius_m,
                            angle_rad,
                        } => {
                            let arc = radius_m * angle_rad.abs();
                            let steps = (arc / (speed_mps * dt)).round() as usize;
                            let yaw_rate = angle_rad / (steps as f64 * dt);
                            let u = VelocityInput::new(
                                Vector3::new(*speed_mps, 0.0, 0.0),
                                Vector3::new(yaw_rate, 0.0, 0.0),
                            );
                            inputs.extend(std::iter::repeat(u).take(steps));
                        }
                    }
                }
                let mut poses = Vec::with_capacity(inputs.len() + 1);
                poses.push(*start);
                for u in &inputs {
                    poses.push(integrate(poses.last().unwrap(), u, dt));
                }
                (poses, inputs)
            }
        }
    }
}

/// Ground-truth record of one VT at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthVtObservation {
    pub vt_id: u32,
    /// Noise- and offset-free measurement of the VT.
    pub truth: MpcMeasurement,
    pub visible: bool,
    pub detected: bool,
}

/// Per-snapshot ground truth alongside the emitted measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub t: u64,
    pub pose: Pose,
    pub per_group: BTreeMap<GroupKey, Vec<TruthVtObservation>>,
}

/// Derives the static VT set: per base station, VT 0 is the station itself
/// (line of sight) and VT `w + 1` is its mirror image across wall `w`. The
/// geometry is shared by every port of the station.
pub fn derive_vts(scenario: &Scenario) -> Result<BTreeMap<GroupKey, Vec<(u32, Vector3<f64>)>>> {
    let mut per_bs: BTreeMap<u32, Vec<(u32, Vector3<f64>)>> = BTreeMap::new();
    for bs in &scenario.base_stations {
        let mut vts = vec![(0u32, bs.position)];
        for (w, wall) in scenario.walls.iter().enumerate() {
            vts.push((w as u32 + 1, wall.mirror(&bs.position)?));
        }
        per_bs.insert(bs.id, vts);
    }
    let mut out = BTreeMap::new();
    for bs in &scenario.base_stations {
        for j in 0..scenario.ports {
            out.insert((bs.id, j), per_bs[&bs.id].clone());
        }
    }
    Ok(out)
}

/// Whether a VT is observable from `vehicle`: the LOS VT always is, a mirror
/// VT only when its reflection point lies on the generating wall.
fn vt_visible(
    scenario: &Scenario,
    bs_position: &Vector3<f64>,
    vt_id: u32,
    vt: &Vector3<f64>,
    vehicle: &Vector3<f64>,
) -> bool {
    if vt_id == 0 {
        return true;
    }
    let wall = &scenario.walls[(vt_id - 1) as usize];
    match reflector_point(vt, bs_position, vehicle) {
        Ok(point) => wall.contains(&point),
        Err(_) => false,
    }
}

/// Synthesizes the measurements of one snapshot at the true pose.
///
/// Randomness is consumed in a fixed order (per group: per visible VT one
/// detection draw and three noise draws, then the clutter count and three
/// uniforms per false alarm), so a given `(scenario, pose, rng state)` always
/// yields the same snapshot.
pub fn generate_snapshot<R: Rng>(
    scenario: &Scenario,
    vts: &BTreeMap<GroupKey, Vec<(u32, Vector3<f64>)>>,
    pose_true: &Pose,
    t: u64,
    rng: &mut R,
) -> (Snapshot, TruthRecord) {
    let mut snapshot = Snapshot {
        t,
        groups: BTreeMap::new(),
    };
    let mut truth = TruthRecord {
        t,
        pose: *pose_true,
        per_group: BTreeMap::new(),
    };

    for bs in &scenario.base_stations {
        let offset_m = scenario.clock_offsets_s.get(&bs.id).copied().unwrap_or(0.0) * SPEED_OF_LIGHT;
        for j in 0..scenario.ports {
            let key = (bs.id, j);
            let mut mpcs = Vec::new();
            let mut observations = Vec::new();
            for &(vt_id, vt) in &vts[&key] {
                let truth_z = match predict_measurement(&vt, pose_true) {
                    Ok(z) => z,
                    Err(_) => continue,
                };
                let visible =
                    vt_visible(scenario, &bs.position, vt_id, &vt, &pose_true.position);
                let mut detected = false;
                if visible {
                    let detect: f64 = rng.gen();
                    let sigma_scale =
                        (scenario.measurement_noise.snr_ref / scenario.snr.at_range(truth_z.range))
                            .sqrt();
                    let sigma = scenario.measurement_noise.base_diag.map(f64::sqrt) * sigma_scale;
                    let draws = [
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    ];
                    if detect < scenario.detection_probability {
                        detected = true;
                        let z = MpcMeasurement::new(
                            (truth_z.range + offset_m + sigma.x * draws[0]).max(1e-3),
                            wrap_angle(truth_z.azimuth + sigma.y * draws[1]),
                            (truth_z.elevation + sigma.z * draws[2])
                                .clamp(-FRAC_PI_2, FRAC_PI_2),
                        );
                        mpcs.push((z, scenario.snr.at_range(truth_z.range)));
                    }
                }
                observations.push(TruthVtObservation {
                    vt_id,
                    truth: truth_z,
                    visible,
                    detected,
                });
            }
            if scenario.clutter_rate > 0.0 {
                let poisson = Poisson::new(scenario.clutter_rate).expect("positive rate");
                let count = poisson.sample(rng) as usize;
                for _ in 0..count {
                    let z = MpcMeasurement::new(
                        rng.gen_range(CLUTTER_RANGE_M.0..CLUTTER_RANGE_M.1),
                        wrap_angle(rng.gen_range(-PI..PI)),
                        rng.gen_range(-CLUTTER_ELEVATION_RAD..CLUTTER_ELEVATION_RAD),
                    );
                    mpcs.push((z, scenario.snr.floor()));
                }
            }
            snapshot.groups.insert(key, mpcs);
            truth.per_group.insert(key, observations);
        }
    }
    (snapshot, truth)
}

/// Odometry sequence as the vehicle reports it: the true velocities
/// corrupted by the scenario's motion noise (six draws per snapshot).
pub fn noisy_odometry<R: Rng>(scenario: &Scenario, rng: &mut R) -> Vec<VelocityInput> {
    let (_, inputs) = scenario.truth();
    let noise = &scenario.motion_noise;
    inputs
        .iter()
        .map(|u| {
            let mut draw = |sigma: f64| {
                let g: f64 = rng.sample(StandardNormal);
                sigma * g
            };
            VelocityInput::new(
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
            )
        })
        .collect()
}

/// Proprioception-only baseline: integrates the noisy odometry with no
/// radio measurements. Shares its noise draws with [`noisy_odometry`], so the
/// same `rng` state reproduces the logged velocity sequence exactly.
pub fn dead_reckoning<R: Rng>(scenario: &Scenario, rng: &mut R) -> Vec<Pose> {
    let inputs = noisy_odometry(scenario, rng);
    integrate_sequence(scenario.start_pose(), &inputs, scenario.snapshot_interval_s)
}

/// Integrates a velocity sequence from `start`; returns poses including the
/// start (length `inputs.len() + 1`).
pub fn integrate_sequence(start: Pose, inputs: &[VelocityInput], dt: f64) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(inputs.len() + 1);
    poses.push(start);
    for u in inputs {
        poses.push(integrate(poses.last().unwrap(), u, dt));
    }
    poses
}

/// Built-in scenario shaped like the urban measurement drive: two two-port
/// base stations, six building walls and a 530 m block loop at 1 m/s with
/// 75 ms snapshots. One long wall 230 m from base station A produces a
/// far-out mirror VT that stays observable around the whole loop.
pub fn lund_like_scenario() -> Scenario {
    let walls = vec![
        // Long facade west of the loop; mirrors BS A to (-270, 160, 28).
        Wall {
            a: Vector3::new(-40.0, -20.0, 0.0),
            b: Vector3::new(-40.0, 175.0, 0.0),
            height_m: 30.0,
            infinite: false,
        },
        // Inner-block building faces enclosed by the loop.
        Wall {
            a: Vector3::new(20.0, 20.0, 0.0),
            b: Vector3::new(135.0, 20.0, 0.0),
            height_m: 18.0,
            infinite: false,
        },
        Wall {
            a: Vector3::new(20.0, 85.0, 0.0),
            b: Vector3::new(135.0, 85.0, 0.0),
            height_m: 18.0,
            infinite: false,
        },
        Wall {
            a: Vector3::new(20.0, 20.0, 0.0),
            b: Vector3::new(20.0, 85.0, 0.0),
            height_m: 18.0,
            infinite: false,
        },
        Wall {
            a: Vector3::new(135.0, 20.0, 0.0),
            b: Vector3::new(135.0, 85.0, 0.0),
            height_m: 18.0,
            infinite: false,
        },
        // Facade east of the loop.
        Wall {
            a: Vector3::new(210.0, -30.0, 0.0),
            b: Vector3::new(210.0, 120.0, 0.0),
            height_m: 24.0,
            infinite: false,
        },
    ];
    let base_stations = vec![
        BaseStation {
            id: 0,
            position: Vector3::new(190.0, 160.0, 28.0),
            cell_id: "376".into(),
        },
        BaseStation {
            id: 1,
            position: Vector3::new(-160.0, -60.0, 22.0),
            cell_id: "178".into(),
        },
    ];
    // Loop of 7066 snapshots at 0.075 m per step: 529.95 m total.
    let quarter = CourseSegment::Turn {
        radius_m: 7.639_437_268_410_976,
        angle_rad: FRAC_PI_2,
    };
    let segments = vec![
        CourseSegment::Straight { length_m: 145.125 },
        quarter,
        CourseSegment::Straight { length_m: 95.85 },
        quarter,
        CourseSegment::Straight { length_m: 145.125 },
        quarter,
        CourseSegment::Straight { length_m: 95.85 },
        quarter,
    ];
    Scenario {
        base_stations,
        walls,
        trajectory: TrajectorySpec::Course {
            start: Pose::origin(),
            speed_mps: 1.0,
            segments,
        },
        snapshot_interval_s: 0.075,
        ports: 2,
        measurement_noise: MeasurementNoiseModel::new(
            3.0,
            2.0_f64.to_radians(),
            2.0_f64.to_radians(),
            160.0,
        ),
        motion_noise: MotionNoise::planar(0.05, 0.011),
        clutter_rate: 0.5,
        detection_probability: 0.9,
        clock_offsets_s: BTreeMap::new(),
        snr: SnrModel {
            ref_snr_1m: 1.0e7,
            path_loss_exponent: 2.0,
        },
    }
}

/// The same scene with noise, clutter, offsets and missed detections removed.
pub fn lund_like_noiseless() -> Scenario {
    let mut scenario = lund_like_scenario();
    scenario.measurement_noise = MeasurementNoiseModel {
        base_diag: Vector3::new(1e-12, 1e-14, 1e-14),
        snr_ref: scenario.measurement_noise.snr_ref,
    };
    scenario.motion_noise = MotionNoise::zero();
    scenario.clutter_rate = 0.0;
    scenario.detection_probability = 1.0;
    scenario.clock_offsets_s = BTreeMap::new();
    scenario
}
