//! Conversion of static-point ranging surveys into trajectory records.
//!
//! Input CSV `point_id,x,y,anchor_id,distance`: repeated readings taken while
//! the tag rests at surveyed points. The n-th reading of every anchor at a
//! point forms one step; points are visited in order of first appearance and
//! the resulting walk is cut into records of `len` steps.

use std::collections::BTreeMap;
use std::path::Path;

use crate::env::{AnchorId, Step, TrajectoryRecord};
use crate::error::{Error, Result};

pub const RAW_HEADER: &str = "point_id,x,y,anchor_id,distance";

struct Point {
    id: String,
    pos: [f64; 2],
    readings: BTreeMap<AnchorId, Vec<f64>>,
}

pub fn convert_static_points(text: &str, source: &Path, len: usize, dt: f64) -> Result<Vec<TrajectoryRecord>> {
    let bad = |line: usize, msg: String| Error::Parse { path: source.to_path_buf(), line, msg };
    if len == 0 {
        return Err(Error::contract("records need at least one step"));
    }
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RAW_HEADER) {
        return Err(bad(1, format!("expected header `{RAW_HEADER}`")));
    }
    let mut points: Vec<Point> = Vec::new();
    for (i, l) in lines.enumerate() {
        let line = i + 2;
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad(line, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|e| bad(line, format!("{what}: {e}")));
        let (x, y, d) = (num(f[1], "x")?, num(f[2], "y")?, num(f[4], "distance")?);
        let anchor: AnchorId = f[3].parse().map_err(|e| bad(line, format!("anchor_id: {e}")))?;
        if !(d >= 0.0) || !d.is_finite() {
            return Err(bad(line, format!("distance must be finite and >= 0, got {d}")));
        }
        let idx = match points.iter().position(|p| p.id == f[0]) {
            Some(i) => {
                if points[i].pos != [x, y] {
                    return Err(bad(line, format!("point `{}` moved", f[0])));
                }
                i
            }
            None => {
                points.push(Point { id: f[0].to_string(), pos: [x, y], readings: BTreeMap::new() });
                points.len() - 1
            }
        };
        points[idx].readings.entry(anchor).or_default().push(d);
    }
    let mut steps = Vec::new();
    for p in &points {
        let rounds = p.readings.values().map(Vec::len).max().unwrap_or(0);
        for r in 0..rounds {
            let measurements = p.readings.iter().filter_map(|(&a, v)| v.get(r).map(|&d| (a, d))).collect();
            steps.push(Step { t: 0, position: Some(p.pos), velocity: None, measurements });
        }
    }
    Ok(steps
        .chunks(len)
        .enumerate()
        .filter(|(_, c)| c.len() == len)
        .map(|(i, c)| TrajectoryRecord {
            id: i as u32,
            dt,
            steps: c.iter().enumerate().map(|(t, s)| Step { t: t + 1, ..s.clone() }).collect(),
        })
        .collect())
}
