//! Trajectory error metrics and the run report.

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::io::{format_incompatible, IoResult};

/// Per-snapshot trajectory error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRow {
    pub t: u64,
    pub horizontal_error_m: f64,
    pub error_3d_m: f64,
}

/// Aggregate trajectory error figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub snapshots: usize,
    pub max_horizontal_error_m: f64,
    pub final_horizontal_error_m: f64,
    pub rmse_horizontal_m: f64,
    pub max_error_3d_m: f64,
    pub final_error_3d_m: f64,
}

/// Reference error envelope from the field experiment the built-in scenario
/// is modeled after, kept in the report header for side-by-side reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceErrorsM {
    pub slam_max_horizontal: f64,
    pub slam_final_horizontal: f64,
    pub proprioception_max_horizontal: f64,
    pub proprioception_final_horizontal: f64,
}

impl Default for ReferenceErrorsM {
    fn default() -> Self {
        Self {
            slam_max_horizontal: 6.0,
            slam_final_horizontal: 3.0,
            proprioception_max_horizontal: 20.0,
            proprioception_final_horizontal: 15.0,
        }
    }
}

/// The `report.json` payload of an evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub reference_errors_m: ReferenceErrorsM,
    pub summary: ErrorSummary,
}

/// Compares two `(t, pose)` sequences on the same snapshot grid.
///
/// Fails if the grids differ in length or in any snapshot index.
pub fn compute_errors(truth: &[(u64, Pose)], estimate: &[(u64, Pose)]) -> IoResult<Vec<ErrorRow>> {
    if truth.len() != estimate.len() {
        return Err(format_incompatible(format!(
            "snapshot grids differ: truth has {} rows, estimate has {}",
            truth.len(),
            estimate.len()
        )));
    }
    truth
        .iter()
        .zip(estimate)
        .map(|((tt, pt), (te, pe))| {
            if tt != te {
                return Err(format_incompatible(format!(
                    "snapshot grids differ: truth t={tt} vs estimate t={te}"
                )));
            }
            let delta = pe.position - pt.position;
            Ok(ErrorRow {
                t: *tt,
                horizontal_error_m: delta.xy().norm(),
                error_3d_m: delta.norm(),
            })
        })
        .collect()
}

/// Reduces per-snapshot errors into the summary block.
pub fn summarize(rows: &[ErrorRow]) -> ErrorSummary {
    let max_h = rows.iter().map(|r| r.horizontal_error_m).fold(0.0, f64::max);
    let max_3d = rows.iter().map(|r| r.error_3d_m).fold(0.0, f64::max);
    let (final_h, final_3d) = rows
        .last()
        .map_or((0.0, 0.0), |r| (r.horizontal_error_m, r.error_3d_m));
    let rmse = if rows.is_empty() {
        0.0
    } else {
        (rows.iter().map(|r| r.horizontal_error_m.powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
    };
    ErrorSummary {
        snapshots: rows.len(),
        max_horizontal_error_m: max_h,
        final_horizontal_error_m: final_h,
        rmse_horizontal_m: rmse,
        max_error_3d_m: max_3d,
        final_error_3d_m: final_3d,
    }
}
