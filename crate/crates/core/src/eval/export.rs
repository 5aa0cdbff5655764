//! CSV files behind the result tables and figures. Numbers use the shortest
//! representation that parses back to the same value, so rewriting the same
//! inputs gives the same bytes.

use std::fmt::Write as _;
use std::path::Path;

use super::benchmark::Method;
use super::heatmap::HeatmapGrid;
use super::metrics::{MetricReport, Track};
use crate::env::AnchorId;
use crate::error::{Error, Result};
use crate::trainer::TrainingLog;

pub const METRICS_HEADER: &str = "method,mae,rmse,p50,p90,n_traj,n_steps";
pub const TRAJECTORY_HEADER: &str = "method,traj_id,t,x_true,y_true,x_est,y_est";
pub const HEATMAP_HEADER: &str = "cell_x,cell_y,anchor_set";

pub fn metrics_csv(reports: &[MetricReport]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in reports {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.method, r.mae, r.rmse, r.p50, r.p90, r.n_traj, r.n_steps);
    }
    s
}

pub fn trajectory_csv(tracks: &[(Method, Vec<Track>)]) -> String {
    let mut s = format!("{TRAJECTORY_HEADER}\n");
    for (m, ts) in tracks {
        for tr in ts {
            for (i, (p, e)) in tr.truth.iter().zip(&tr.estimates).enumerate() {
                let _ = writeln!(s, "{m},{},{},{},{},{},{}", tr.traj_id, i + 1, p[0], p[1], e[0], e[1]);
            }
        }
    }
    s
}

pub fn heatmap_csv(grid: &HeatmapGrid) -> String {
    let mut s = format!("{HEATMAP_HEADER}\n");
    for cy in 0..grid.ny {
        for cx in 0..grid.nx {
            let ids: Vec<String> = grid.cell(cx, cy).iter().map(|i| i.to_string()).collect();
            let _ = writeln!(s, "{cx},{cy},{}", ids.join("|"));
        }
    }
    s
}

/// Plot data to write; absent parts are left out.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlotData<'a> {
    pub reports: Option<&'a [MetricReport]>,
    pub tracks: Option<&'a [(Method, Vec<Track>)]>,
    pub heatmap: Option<&'a HeatmapGrid>,
    pub learning_curve: Option<&'a TrainingLog>,
}

/// Writes `metrics.csv`, `trajectories.csv`, `heatmap.csv` and
/// `learning_curve.csv` into `dir`; returns the paths written.
pub fn export_plot_data(data: &PlotData, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, text)?;
        files.push(p);
        Ok(())
    };
    if let Some(r) = data.reports {
        put("metrics.csv", metrics_csv(r))?;
    }
    if let Some(t) = data.tracks {
        put("trajectories.csv", trajectory_csv(t))?;
    }
    if let Some(h) = data.heatmap {
        put("heatmap.csv", heatmap_csv(h))?;
    }
    if let Some(l) = data.learning_curve {
        put("learning_curve.csv", l.to_csv())?;
    }
    Ok(files)
}

fn records(text: &str, header: &str) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found: Vec<&str> = rdr.headers()?.iter().collect();
    if found.join(",") != header {
        return Err(Error::Parse { path: "<export>".into(), line: 1, msg: format!("expected header `{header}`") });
    }
    Ok(rdr.records().collect::<std::result::Result<_, _>>()?)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse { path: "<export>".into(), line, msg: format!("bad field {}", i + 1) })
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricReport>> {
    records(text, METRICS_HEADER)?
        .iter()
        .map(|r| {
            Ok(MetricReport {
                method: field(r, 0)?,
                mae: field(r, 1)?,
                rmse: field(r, 2)?,
                p50: field(r, 3)?,
                p90: field(r, 4)?,
                n_traj: field(r, 5)?,
                n_steps: field(r, 6)?,
            })
        })
        .collect()
}

/// Rows as `(method, traj_id, t, truth, estimate)`.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<(String, u32, usize, [f64; 2], [f64; 2])>> {
    records(text, TRAJECTORY_HEADER)?
        .iter()
        .map(|r| Ok((field(r, 0)?, field(r, 1)?, field(r, 2)?, [field(r, 3)?, field(r, 4)?], [field(r, 5)?, field(r, 6)?])))
        .collect()
}

/// Rows as `(cell_x, cell_y, anchor ids)`.
pub fn parse_heatmap_csv(text: &str) -> Result<Vec<(usize, usize, Vec<AnchorId>)>> {
    records(text, HEATMAP_HEADER)?
        .iter()
        .map(|r| {
            let set: String = field(r, 2)?;
            let ids = set
                .split('|')
                .map(|s| s.parse().map_err(|e: std::num::ParseIntError| Error::contract(e.to_string())))
                .collect::<Result<Vec<AnchorId>>>()?;
            Ok((field(r, 0)?, field(r, 1)?, ids))
        })
        .collect()
}
