//! Trajectory CSV: `traj_id,t,x,y,anchor_id,distance`, one row per reading.
//!
//! Rows of a trajectory are ordered by time index. `x,y` may be empty when
//! ground truth is unknown; `anchor_id,distance` may both be empty for a step
//! with no reading.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::trajectory::{Step, TrajectoryRecord};
use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "traj_id,t,x,y,anchor_id,distance";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestConfig {
    /// Seconds between consecutive time indices.
    pub dt: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { dt: 0.1 }
    }
}

pub fn ingest_dataset(path: &Path, cfg: &IngestConfig) -> Result<Vec<TrajectoryRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, path, cfg)
}

pub fn parse_dataset(text: &str, path: &Path, cfg: &IngestConfig) -> Result<Vec<TrajectoryRecord>> {
    let err = |line: usize, msg: String| Error::Parse { path: PathBuf::from(path), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("expected header `{TRAJECTORY_HEADER}`, found `{h}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut records: BTreeMap<u32, TrajectoryRecord> = BTreeMap::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(line, format!("expected 6 fields, found {}", f.len())));
        }
        let traj: u32 = f[0].parse().map_err(|e| err(line, format!("traj_id: {e}")))?;
        let t: usize = f[1].parse().map_err(|e| err(line, format!("t: {e}")))?;
        let position = match (f[2], f[3]) {
            ("", "") => None,
            (x, y) => {
                let x: f64 = x.parse().map_err(|e| err(line, format!("x: {e}")))?;
                let y: f64 = y.parse().map_err(|e| err(line, format!("y: {e}")))?;
                if !(x.is_finite() && y.is_finite()) {
                    return Err(err(line, "non-finite position".into()));
                }
                Some([x, y])
            }
        };
        let reading = match (f[4], f[5]) {
            ("", "") => None,
            (a, d) => {
                let a: u32 = a.parse().map_err(|e| err(line, format!("anchor_id: {e}")))?;
                let d: f64 = d.parse().map_err(|e| err(line, format!("distance: {e}")))?;
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(err(line, format!("distance must be a finite value >= 0, got {d}")));
                }
                Some((a, d))
            }
        };
        let rec = records.entry(traj).or_insert_with(|| TrajectoryRecord { id: traj, dt: cfg.dt, steps: Vec::new() });
        let last_t = rec.steps.last().map(|s| s.t).unwrap_or(0);
        if t == last_t {
            let step = rec.steps.last_mut().expect("non-empty");
            if step.position != position {
                return Err(err(line, format!("ground truth changes within time index {t}")));
            }
            if let Some((a, d)) = reading {
                if step.measurements.insert(a, d).is_some() {
                    return Err(err(line, format!("duplicate reading for anchor {a} at t = {t}")));
                }
            }
        } else if t == last_t + 1 {
            let mut measurements = BTreeMap::new();
            if let Some((a, d)) = reading {
                measurements.insert(a, d);
            }
            rec.steps.push(Step { t, position, velocity: None, measurements });
        } else if t < last_t {
            return Err(err(line, format!("time index {t} after {last_t} in trajectory {traj} is not monotone")));
        } else {
            return Err(err(line, format!("time index jumps from {last_t} to {t} in trajectory {traj}")));
        }
    }
    Ok(records.into_values().collect())
}

/// Canonical text form; `parse_dataset` of the output reproduces the
/// records (velocities are not part of the schema).
pub fn format_dataset(records: &[TrajectoryRecord]) -> String {
    let mut out = String::with_capacity(64 * records.iter().map(|r| r.len()).sum::<usize>() + 64);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        for s in &r.steps {
            let (x, y) = match s.position {
                Some(p) => (format!("{}", p[0]), format!("{}", p[1])),
                None => (String::new(), String::new()),
            };
            if s.measurements.is_empty() {
                let _ = writeln!(out, "{},{},{},{},,", r.id, s.t, x, y);
            }
            for (a, d) in &s.measurements {
                let _ = writeln!(out, "{},{},{},{},{},{}", r.id, s.t, x, y, a, d);
            }
        }
    }
    out
}

pub fn export_dataset(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_dataset(records))?;
    Ok(())
}
