//! File formats: the JSON-Lines measurement log and the CSV artifacts.
//!
//! The measurement log holds one snapshot per line:
//!
//! ```text
//! {"t":0,"u":[1.0,0,0,0.1,0,0],"groups":[{"k":0,"j":0,"mpcs":[{"d":41.2,"az":0.52,"el":0.07,"snr":812.0}]}]}
//! ```
//!
//! `u` is the odometry velocity `[u_x, u_y, u_z, u_yaw, u_pitch, u_roll]`
//! (m/s, rad/s), `k`/`j` are the base-station and antenna-port indices, and
//! each component carries pseudorange `d` (m), azimuth `az` and elevation
//! `el` (rad) plus its linear `snr`. Pose CSVs use a fixed
//! `t,x_m,y_m,z_m,yaw_rad,pitch_rad,roll_rad` header; all files are written
//! with deterministic shortest-float formatting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{AssociationRecord, GroupKey, Snapshot};
use crate::geometry::{MpcMeasurement, Pose};
use crate::motion::VelocityInput;

/// Errors raised while reading or writing artifact files.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Incompatible(String),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn format_error(line: usize, message: impl Into<String>) -> IoError {
    IoError::Format {
        line,
        message: message.into(),
    }
}

/// Incompatibility between artifact files (e.g. differing snapshot grids).
pub fn format_incompatible(message: impl Into<String>) -> IoError {
    IoError::Incompatible(message.into())
}

/// One measurement-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub t: u64,
    pub u: [f64; 6],
    pub groups: Vec<LogGroup>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGroup {
    /// Base-station index.
    pub k: u32,
    /// Antenna-port index.
    pub j: u32,
    pub mpcs: Vec<LogMpc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogMpc {
    /// Pseudorange, m.
    pub d: f64,
    /// Azimuth, rad.
    pub az: f64,
    /// Elevation, rad.
    pub el: f64,
    /// Linear SNR.
    pub snr: f64,
}

impl LogLine {
    pub fn from_snapshot(snapshot: &Snapshot, u: &VelocityInput) -> Self {
        let groups = snapshot
            .groups
            .iter()
            .map(|(&(k, j), mpcs)| LogGroup {
                k,
                j,
                mpcs: mpcs
                    .iter()
                    .map(|(z, snr)| LogMpc {
                        d: z.range,
                        az: z.azimuth,
                        el: z.elevation,
                        snr: *snr,
                    })
                    .collect(),
            })
            .collect();
        Self {
            t: snapshot.t,
            u: u.to_array(),
            groups,
        }
    }

    pub fn to_snapshot(&self) -> (Snapshot, VelocityInput) {
        let mut groups: BTreeMap<GroupKey, Vec<(MpcMeasurement, f64)>> = BTreeMap::new();
        for group in &self.groups {
            let entry = groups.entry((group.k, group.j)).or_default();
            for mpc in &group.mpcs {
                entry.push((MpcMeasurement::new(mpc.d, mpc.az, mpc.el), mpc.snr));
            }
        }
        (
            Snapshot { t: self.t, groups },
            VelocityInput::from_array(self.u),
        )
    }
}

/// Writes a measurement log, one snapshot per line.
pub fn write_measurement_log<'a>(
    path: &Path,
    lines: impl IntoIterator<Item = (&'a Snapshot, &'a VelocityInput)>,
) -> IoResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (snapshot, u) in lines {
        let line = LogLine::from_snapshot(snapshot, u);
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| format_error(snapshot.t as usize, e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and validates a measurement log: parseable lines, strictly
/// increasing `t`, finite values, positive ranges and SNRs.
pub fn read_measurement_log(path: &Path) -> IoResult<Vec<(Snapshot, VelocityInput)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut last_t: Option<u64> = None;
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line)
            .map_err(|e| format_error(index + 1, e.to_string()))?;
        if let Some(prev) = last_t {
            if parsed.t <= prev {
                return Err(format_error(
                    index + 1,
                    format!("snapshot index {} does not increase past {}", parsed.t, prev),
                ));
            }
        }
        last_t = Some(parsed.t);
        if !parsed.u.iter().all(|v| v.is_finite()) {
            return Err(format_error(index + 1, "non-finite velocity input"));
        }
        for group in &parsed.groups {
            for mpc in &group.mpcs {
                if !(mpc.d.is_finite() && mpc.az.is_finite() && mpc.el.is_finite()) {
                    return Err(format_error(index + 1, "non-finite measurement"));
                }
                if mpc.d <= 0.0 {
                    return Err(format_error(index + 1, format!("pseudorange {} <= 0", mpc.d)));
                }
                if !(mpc.snr > 0.0) {
                    return Err(format_error(index + 1, format!("snr {} <= 0", mpc.snr)));
                }
            }
        }
        out.push(parsed.to_snapshot());
    }
    Ok(out)
}

/// Header shared by the pose CSV files.
pub const POSE_CSV_HEADER: &str = "t,x_m,y_m,z_m,yaw_rad,pitch_rad,roll_rad";

/// Writes `(t, pose)` rows under [`POSE_CSV_HEADER`].
pub fn write_pose_csv<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (u64, &'a Pose)>,
) -> IoResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{POSE_CSV_HEADER}")?;
    for (t, pose) in rows {
        writeln!(
            out,
            "{t},{},{},{},{},{},{}",
            pose.position.x, pose.position.y, pose.position.z, pose.yaw, pose.pitch, pose.roll
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a pose CSV written by [`write_pose_csv`] (extra columns such as the
/// estimate file's `ess` are ignored).
pub fn read_pose_csv(path: &Path) -> IoResult<Vec<(u64, Pose)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if index == 0 {
            if !line.starts_with(POSE_CSV_HEADER) {
                return Err(format_error(1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 7 {
            return Err(format_error(index + 1, "expected at least 7 columns"));
        }
        let parse = |i: usize| -> IoResult<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| format_error(index + 1, format!("column {i}: {e}")))
        };
        let t = fields[0]
            .parse::<u64>()
            .map_err(|e| format_error(index + 1, e.to_string()))?;
        rows.push((
            t,
            Pose::new(
                Vector3::new(parse(1)?, parse(2)?, parse(3)?),
                parse(4)?,
                parse(5)?,
                parse(6)?,
            ),
        ));
    }
    Ok(rows)
}

/// Writes the estimate trajectory with the per-snapshot effective sample size.
pub fn write_estimate_csv<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (u64, &'a Pose, f64)>,
) -> IoResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{POSE_CSV_HEADER},ess")?;
    for (t, pose, ess) in rows {
        writeln!(
            out,
            "{t},{},{},{},{},{},{},{ess}",
            pose.position.x, pose.position.y, pose.position.z, pose.yaw, pose.pitch, pose.roll
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Header of the association table.
pub const ASSOCIATIONS_CSV_HEADER: &str = "t,bs,port,vt_id,measurement_index,range_m,mahalanobis2";

/// Writes the per-snapshot association records of the reference particle.
pub fn write_associations_csv<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a AssociationRecord>,
) -> IoResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{ASSOCIATIONS_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t, r.bs, r.port, r.vt_id, r.measurement_index, r.range_m, r.mahalanobis2
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Parsed association row (used by the report stage).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationRow {
    pub t: u64,
    pub bs: u32,
    pub port: u32,
    pub vt_id: u64,
    pub measurement_index: usize,
    pub range_m: f64,
    pub mahalanobis2: f64,
}

pub fn read_associations_csv(path: &Path) -> IoResult<Vec<AssociationRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if index == 0 {
            if line != ASSOCIATIONS_CSV_HEADER {
                return Err(format_error(1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(format_error(index + 1, "expected 7 columns"));
        }
        let err = |e: String| format_error(index + 1, e);
        rows.push(AssociationRow {
            t: f[0].parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            bs: f[1].parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            port: f[2].parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            vt_id: f[3].parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            measurement_index: f[4]
                .parse()
                .map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
            range_m: f[5].parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
            mahalanobis2: f[6]
                .parse()
                .map_err(|e: std::num::ParseFloatError| err(e.to_string()))?,
        });
    }
    Ok(rows)
}

/// Header of the final-map table.
pub const VTS_CSV_HEADER: &str = "bs,port,vt_id,status,hits,misses,x_m,y_m,z_m,\
cov_xx_m2,cov_xy_m2,cov_xz_m2,cov_yy_m2,cov_yz_m2,cov_zz_m2,\
reflector_x_m,reflector_y_m,reflector_z_m";

/// One row of the final VT table; the reflector point is present only where
/// the first-order-reflection mapping is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct VtRow {
    pub bs: u32,
    pub port: u32,
    pub vt_id: u64,
    pub status: String,
    pub hits: u32,
    pub misses: u32,
    pub mean: Vector3<f64>,
    pub covariance_upper: [f64; 6],
    pub reflector: Option<Vector3<f64>>,
}

pub fn write_vts_csv<'a>(path: &Path, rows: impl IntoIterator<Item = &'a VtRow>) -> IoResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{VTS_CSV_HEADER}")?;
    for r in rows {
        let c = &r.covariance_upper;
        let reflector = match &r.reflector {
            Some(p) => format!("{},{},{}", p.x, p.y, p.z),
            None => ",,".to_string(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.bs,
            r.port,
            r.vt_id,
            r.status,
            r.hits,
            r.misses,
            r.mean.x,
            r.mean.y,
            r.mean.z,
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            c[5],
            reflector
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_vts_csv(path: &Path) -> IoResult<Vec<VtRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if index == 0 {
            if line != VTS_CSV_HEADER {
                return Err(format_error(1, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 18 {
            return Err(format_error(index + 1, "expected 18 columns"));
        }
        let float = |i: usize| -> IoResult<f64> {
            f[i].parse()
                .map_err(|e: std::num::ParseFloatError| format_error(index + 1, e.to_string()))
        };
        let int = |i: usize| -> IoResult<u64> {
            f[i].parse()
                .map_err(|e: std::num::ParseIntError| format_error(index + 1, e.to_string()))
        };
        let reflector = if f[15].is_empty() {
            None
        } else {
            Some(Vector3::new(float(15)?, float(16)?, float(17)?))
        };
        rows.push(VtRow {
            bs: int(0)? as u32,
            port: int(1)? as u32,
            vt_id: int(2)?,
            status: f[3].to_string(),
            hits: int(4)? as u32,
            misses: int(5)? as u32,
            mean: Vector3::new(float(6)?, float(7)?, float(8)?),
            covariance_upper: [
                float(9)?,
                float(10)?,
                float(11)?,
                float(12)?,
                float(13)?,
                float(14)?,
            ],
            reflector,
        });
    }
    Ok(rows)
}
