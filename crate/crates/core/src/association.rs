//! Maximum-likelihood data association within one (port, base-station) group.
//!
//! Predicted VT measurements and observed components are matched by
//! minimizing Mahalanobis cost under a chi-square gate, with the Hungarian
//! algorithm resolving conflicts. Leftover measurements become birth
//! candidates, leftover VTs are counted as misses.

use nalgebra::{Cholesky, Matrix3};

use crate::geometry::MpcMeasurement;
use crate::vt_map::{self, measurement_covariance, MeasurementNoiseModel};
use crate::{Error, Result};

/// Chi-square 0.99 quantile with 3 degrees of freedom; the default gate.
pub const DEFAULT_GATE: f64 = 11.345;

/// Cost placed on gated-out pairs; matches at this level are rejected.
const GATE_SENTINEL: f64 = 1e12;

/// Predicted observation of one VT: `h(mean, pose)` plus the VT covariance
/// projected into measurement space (`H Sigma H^T`, before measurement noise).
#[derive(Debug, Clone, Copy)]
pub struct VtPrediction {
    pub predicted: MpcMeasurement,
    pub projected_cov: Matrix3<f64>,
}

/// Partition of one group's VTs and measurements after assignment.
///
/// Every VT index lands in `pairs` or `unmatched_vts`; every measurement
/// index in `pairs` or `unmatched_measurements`; nothing appears twice.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AssignmentResult {
    /// Matched (vt index, measurement index) pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_vts: Vec<usize>,
    pub unmatched_measurements: Vec<usize>,
}

/// Innovation covariance `H Sigma H^T + Q_t`.
pub fn innovation_covariance(
    h: &Matrix3<f64>,
    sigma: &Matrix3<f64>,
    q_t: &Matrix3<f64>,
) -> Matrix3<f64> {
    h * sigma * h.transpose() + q_t
}

/// Squared Mahalanobis distance of the wrapped innovation under `s`.
pub fn mahalanobis2(z: &MpcMeasurement, predicted: &MpcMeasurement, s: &Matrix3<f64>) -> Result<f64> {
    let nu = vt_map::innovation(z, predicted);
    let chol = Cholesky::new(*s).ok_or(Error::SingularInnovation)?;
    Ok(nu.dot(&chol.solve(&nu)))
}

/// Log of the Gaussian measurement likelihood, `-0.5 ln|2 pi S| - 0.5 m2`.
pub fn log_likelihood(
    z: &MpcMeasurement,
    predicted: &MpcMeasurement,
    s: &Matrix3<f64>,
) -> Result<f64> {
    Ok(cost_and_log_likelihood(z, predicted, s)?.1)
}

/// Squared Mahalanobis distance and log-likelihood from one factorization.
pub fn cost_and_log_likelihood(
    z: &MpcMeasurement,
    predicted: &MpcMeasurement,
    s: &Matrix3<f64>,
) -> Result<(f64, f64)> {
    let nu = vt_map::innovation(z, predicted);
    let chol = Cholesky::new(*s).ok_or(Error::SingularInnovation)?;
    let m2 = nu.dot(&chol.solve(&nu));
    let ln_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let ll = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + ln_det + m2);
    Ok((m2, ll))
}

/// Optimal min-cost matching of a rectangular cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HungarianResult {
    /// Matched (row, column) pairs, `min(R, C)` of them, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Hungarian (Kuhn-Munkres) solver via shortest augmenting paths on a
/// zero-padded square matrix. Entries must be finite and non-negative.
pub fn hungarian(cost: &[Vec<f64>]) -> HungarianResult {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return HungarianResult {
            pairs: Vec::new(),
            total_cost: 0.0,
        };
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    let n = rows.max(cols);
    let at = |r: usize, c: usize| -> f64 {
        if r < rows && c < cols {
            cost[r][c]
        } else {
            0.0
        }
    };

    // 1-based dual potentials and column ownership, after Jonker-Volgenant.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1]; // row owning column j (0 = free)
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        // Augment along the alternating path back to the root.
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    let mut total_cost = 0.0;
    for j in 1..=n {
        let r = owner[j];
        if r >= 1 && r <= rows && j <= cols {
            pairs.push((r - 1, j - 1));
            total_cost += cost[r - 1][j - 1];
        }
    }
    pairs.sort_unstable();
    HungarianResult { pairs, total_cost }
}

/// Gated assignment over a prebuilt cost matrix: entries above `gate` are
/// excluded, the rest matched at minimum total cost.
pub fn gated_assignment(cost: &[Vec<f64>], gate: f64) -> AssignmentResult {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let gated: Vec<Vec<f64>> = cost
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| if c <= gate { c } else { GATE_SENTINEL })
                .collect()
        })
        .collect();
    let matching = hungarian(&gated);

    let mut result = AssignmentResult::default();
    let mut vt_taken = vec![false; rows];
    let mut meas_taken = vec![false; cols];
    for (r, c) in matching.pairs {
        if gated[r][c] < GATE_SENTINEL {
            vt_taken[r] = true;
            meas_taken[c] = true;
            result.pairs.push((r, c));
        }
    }
    result.unmatched_vts = (0..rows).filter(|&r| !vt_taken[r]).collect();
    result.unmatched_measurements = (0..cols).filter(|&c| !meas_taken[c]).collect();
    result
}

/// Associates predicted VT observations with measured components.
///
/// The pairwise cost is the Mahalanobis distance under the innovation
/// covariance `H Sigma H^T + Q(snr)`, with the measurement's own SNR scaling
/// its noise term.
pub fn associate(
    predictions: &[VtPrediction],
    measurements: &[(MpcMeasurement, f64)],
    noise: &MeasurementNoiseModel,
    gate: f64,
) -> Result<AssignmentResult> {
    debug_assert!(gate > 0.0);
    if predictions.is_empty() || measurements.is_empty() {
        return Ok(AssignmentResult {
            pairs: Vec::new(),
            unmatched_vts: (0..predictions.len()).collect(),
            unmatched_measurements: (0..measurements.len()).collect(),
        });
    }
    let q_per_meas = measurements
        .iter()
        .map(|(_, snr)| measurement_covariance(noise, *snr))
        .collect::<Result<Vec<_>>>()?;
    let mut cost = vec![vec![0.0; measurements.len()]; predictions.len()];
    for (l, pred) in predictions.iter().enumerate() {
        for (m, (z, _)) in measurements.iter().enumerate() {
            let s = pred.projected_cov + q_per_meas[m];
            cost[l][m] = mahalanobis2(z, &pred.predicted, &s)?;
        }
    }
    Ok(gated_assignment(&cost, gate))
}

/// Innovation covariance for one (prediction, measurement) pair as used in
/// [`associate`]; exposed so weighting and logging use identical values.
pub fn pair_covariance(
    pred: &VtPrediction,
    snr: f64,
    noise: &MeasurementNoiseModel,
) -> Result<Matrix3<f64>> {
    Ok(pred.projected_cov + measurement_covariance(noise, snr)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn spd(rng: &mut StdRng) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        a * a.transpose() + Matrix3::identity() * 0.1
    }

    #[test]
    fn innovation_covariance_cases() {
        let q = Matrix3::new(2.0, 0.1, 0.0, 0.1, 3.0, 0.2, 0.0, 0.2, 1.0);
        assert_eq!(
            innovation_covariance(&Matrix3::zeros(), &Matrix3::identity(), &q),
            q
        );
        assert_eq!(
            innovation_covariance(&Matrix3::identity(), &Matrix3::identity(), &Matrix3::identity()),
            2.0 * Matrix3::identity()
        );
    }

    #[test]
    fn innovation_covariance_stays_spd() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..10_000 {
            let h = Matrix3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            let s = innovation_covariance(&h, &spd(&mut rng), &spd(&mut rng));
            assert!(Cholesky::new(s).is_some());
        }
    }

    #[test]
    fn mahalanobis_cases() {
        let z = MpcMeasurement::new(10.0, 0.5, 0.1);
        assert_eq!(mahalanobis2(&z, &z, &Matrix3::identity()).unwrap(), 0.0);

        let shifted = MpcMeasurement::new(13.0, 0.5, 0.1);
        assert!((mahalanobis2(&shifted, &z, &Matrix3::identity()).unwrap() - 9.0).abs() < 1e-12);

        let wrapped = MpcMeasurement::new(10.0, 0.5 + 2.0 * std::f64::consts::PI, 0.1);
        assert!(mahalanobis2(&wrapped, &z, &Matrix3::identity()).unwrap() < 1e-20);
    }

    #[test]
    fn log_likelihood_closed_form_at_center() {
        let z = MpcMeasurement::new(10.0, 0.0, 0.0);
        let ll = log_likelihood(&z, &z, &Matrix3::identity()).unwrap();
        let expected = -1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn widening_the_covariance_lowers_the_peak() {
        let z = MpcMeasurement::new(10.0, 0.0, 0.0);
        let tight = log_likelihood(&z, &z, &Matrix3::identity()).unwrap();
        let wide = log_likelihood(&z, &z, &(2.0 * Matrix3::identity())).unwrap();
        assert!(wide < tight);
    }

    /// The density implied by `log_likelihood` should integrate to one; a
    /// coarse midpoint quadrature over +/-5 sigma checks the normalization.
    #[test]
    fn likelihood_normalizes_under_quadrature() {
        let sigma = Vector3::new(0.8, 0.05, 0.04);
        let s = Matrix3::from_diagonal(&sigma.map(|v| v * v));
        let center = MpcMeasurement::new(50.0, 0.3, 0.05);
        let n = 60;
        let mut integral = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let frac = |idx: usize| (idx as f64 + 0.5) / n as f64 * 10.0 - 5.0;
                    let z = MpcMeasurement::new(
                        center.range + frac(i) * sigma.x,
                        center.azimuth + frac(j) * sigma.y,
                        center.elevation + frac(k) * sigma.z,
                    );
                    integral += log_likelihood(&z, &center, &s).unwrap().exp();
                }
            }
        }
        let cell = (10.0 / n as f64).powi(3) * sigma.x * sigma.y * sigma.z;
        integral *= cell;
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn hungarian_examples() {
        let r = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert!((r.total_cost - 2.0).abs() < 1e-12);

        let r = hungarian(&[vec![7.0]]);
        assert_eq!(r.pairs, vec![(0, 0)]);
        assert!((r.total_cost - 7.0).abs() < 1e-12);

        let r = hungarian(&[vec![5.0, 1.0, 3.0]]);
        assert_eq!(r.pairs, vec![(0, 1)]);
        assert!((r.total_cost - 1.0).abs() < 1e-12);
    }

    fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        // Enumerate injective maps from the smaller side into the larger.
        fn recurse(
            cost: &[Vec<f64>],
            row: usize,
            used: &mut Vec<bool>,
            acc: f64,
            best: &mut f64,
            row_major: bool,
        ) {
            let rows = if row_major { cost.len() } else { cost[0].len() };
            if row == rows {
                *best = best.min(acc);
                return;
            }
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    let step = if row_major { cost[row][c] } else { cost[c][row] };
                    recurse(cost, row + 1, used, acc + step, best, row_major);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        if rows <= cols {
            recurse(cost, 0, &mut vec![false; cols], 0.0, &mut best, true);
        } else {
            recurse(cost, 0, &mut vec![false; rows], 0.0, &mut best, false);
        }
        best
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_matrices() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..1000 {
            let rows = rng.gen_range(1..=6);
            let cols = rng.gen_range(1..=6);
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(0.0..100.0)).collect())
                .collect();
            let solved = hungarian(&cost);
            let brute = brute_force_min_cost(&cost);
            assert!(
                (solved.total_cost - brute).abs() < 1e-9,
                "{rows}x{cols}: hungarian {} vs brute {brute}",
                solved.total_cost
            );
            assert_eq!(solved.pairs.len(), rows.min(cols));
        }
    }

    #[test]
    fn gating_splits_clear_and_far_pairs() {
        let cost = vec![vec![0.1, 50.0], vec![50.0, 0.1]];
        let r = gated_assignment(&cost, DEFAULT_GATE);
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert!(r.unmatched_vts.is_empty());
        assert!(r.unmatched_measurements.is_empty());

        let r = gated_assignment(&[vec![20.0]], DEFAULT_GATE);
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_vts, vec![0]);
        assert_eq!(r.unmatched_measurements, vec![0]);
    }

    fn prediction_at(range: f64, az: f64) -> VtPrediction {
        VtPrediction {
            predicted: MpcMeasurement::new(range, az, 0.0),
            projected_cov: Matrix3::identity() * 1e-6,
        }
    }

    #[test]
    fn associate_pairs_a_single_in_gate_measurement() {
        let noise = MeasurementNoiseModel::new(1.0, 0.05, 0.05, 100.0);
        let preds = vec![prediction_at(100.0, 0.2)];
        let meas = vec![(MpcMeasurement::new(100.5, 0.21, 0.0), 100.0)];
        let r = associate(&preds, &meas, &noise, DEFAULT_GATE).unwrap();
        assert_eq!(r.pairs, vec![(0, 0)]);
    }

    #[test]
    fn associate_rejects_out_of_gate_measurement() {
        let noise = MeasurementNoiseModel::new(1.0, 0.05, 0.05, 100.0);
        let preds = vec![prediction_at(100.0, 0.2)];
        let meas = vec![(MpcMeasurement::new(120.0, 0.2, 0.0), 100.0)];
        let r = associate(&preds, &meas, &noise, DEFAULT_GATE).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_vts, vec![0]);
        assert_eq!(r.unmatched_measurements, vec![0]);
    }

    #[test]
    fn associate_output_is_a_partition() {
        let mut rng = StdRng::seed_from_u64(5);
        let noise = MeasurementNoiseModel::new(2.0, 0.05, 0.05, 100.0);
        for _ in 0..300 {
            let nl = rng.gen_range(0..6);
            let nm = rng.gen_range(0..6);
            let preds: Vec<_> = (0..nl)
                .map(|_| prediction_at(rng.gen_range(50.0..300.0), rng.gen_range(-3.0..3.0)))
                .collect();
            let meas: Vec<_> = (0..nm)
                .map(|_| {
                    (
                        MpcMeasurement::new(rng.gen_range(50.0..300.0), rng.gen_range(-3.0..3.0), 0.0),
                        rng.gen_range(10.0..500.0),
                    )
                })
                .collect();
            let r = associate(&preds, &meas, &noise, DEFAULT_GATE).unwrap();
            let mut vts: Vec<usize> = r.pairs.iter().map(|p| p.0).collect();
            vts.extend(&r.unmatched_vts);
            vts.sort_unstable();
            assert_eq!(vts, (0..nl).collect::<Vec<_>>());
            let mut ms: Vec<usize> = r.pairs.iter().map(|p| p.1).collect();
            ms.extend(&r.unmatched_measurements);
            ms.sort_unstable();
            assert_eq!(ms, (0..nm).collect::<Vec<_>>());
        }
    }

    #[test]
    fn associate_is_permutation_invariant_up_to_relabeling() {
        let noise = MeasurementNoiseModel::new(1.0, 0.05, 0.05, 100.0);
        let preds = vec![prediction_at(100.0, 0.0), prediction_at(200.0, 1.0)];
        let meas = vec![
            (MpcMeasurement::new(100.4, 0.01, 0.0), 100.0),
            (MpcMeasurement::new(199.5, 1.02, 0.0), 80.0),
        ];
        let swapped = vec![meas[1], meas[0]];
        let a = associate(&preds, &meas, &noise, DEFAULT_GATE).unwrap();
        let b = associate(&preds, &swapped, &noise, DEFAULT_GATE).unwrap();
        let values = |r: &AssignmentResult, ms: &[(MpcMeasurement, f64)]| {
            let mut v: Vec<(usize, u64)> = r
                .pairs
                .iter()
                .map(|&(l, m)| (l, ms[m].0.range.to_bits()))
                .collect();
            v.sort_unstable();
            v
        };
        assert_eq!(values(&a, &meas), values(&b, &swapped));
    }
}
