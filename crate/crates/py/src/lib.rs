//! Python bindings: geometry, subset scheduling and the EKF baseline.

use std::collections::{BTreeMap, HashMap};

use locdreamer::ekf::{ekf_run, EkfConfig};
use locdreamer::env::{Anchor, AnchorId, AnchorLayout, Step, TrajectoryRecord};
use locdreamer::eval::gdop as gdop_of;
use locdreamer::numkit::cosine_lr as cosine;
use locdreamer::scheduler::{self, SchedulingAction};
use locdreamer::trainer::seeded;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: locdreamer::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Geometric dilution of precision of a 2D range fix at `position`.
#[pyfunction]
fn gdop(position: (f64, f64), anchors: Vec<(f64, f64)>) -> f64 {
    let pts: Vec<[f64; 2]> = anchors.into_iter().map(|(x, y)| [x, y]).collect();
    gdop_of([position.0, position.1], &pts)
}

/// Indices of the `k` largest logits, ascending.
#[pyfunction]
fn greedy_subset(logits: Vec<f64>, k: usize) -> PyResult<Vec<usize>> {
    scheduler::greedy_subset(&logits, k).map(|a| a.indices()).map_err(py_err)
}

/// One Plackett–Luce draw: the selection order and its log-probability.
#[pyfunction]
#[pyo3(signature = (logits, k, seed=0))]
fn sample_subset(logits: Vec<f64>, k: usize, seed: u64) -> PyResult<(Vec<usize>, f64)> {
    let mut rng = seeded(seed, 0);
    let s = scheduler::sample_subset(&logits, k, &mut rng).map_err(py_err)?;
    Ok((s.order, s.log_prob))
}

#[pyfunction]
fn cosine_lr(step: u64, total: u64, lr0: f64) -> f64 {
    cosine(step, total, lr0)
}

/// Filters one sequence of `{anchor_id: distance}` readings with every
/// anchor used at every step. Returns one position per step.
#[pyfunction]
#[pyo3(signature = (anchors, readings, dt=0.1, sigma_acc=0.2, sigma_n=1.0))]
fn ekf_track(
    anchors: Vec<(AnchorId, f64, f64)>,
    readings: Vec<HashMap<AnchorId, f64>>,
    dt: f64,
    sigma_acc: f64,
    sigma_n: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let layout = AnchorLayout::new(anchors.into_iter().map(|(id, x, y)| Anchor { id, position: [x, y] }).collect())
        .map_err(py_err)?;
    let steps = readings
        .into_iter()
        .enumerate()
        .map(|(i, m)| Step { t: i + 1, position: None, velocity: None, measurements: m.into_iter().collect::<BTreeMap<_, _>>() })
        .collect();
    let record = TrajectoryRecord { id: 0, dt, steps };
    let cfg = EkfConfig { sigma_acc, sigma_n, dt };
    let a = layout.len();
    let run = ekf_run(&record, &layout, |_| SchedulingAction::all(a), &cfg).map_err(py_err)?;
    Ok(run.positions.into_iter().map(|p| (p[0], p[1])).collect())
}

#[pymodule]
fn locdreamer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gdop, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_subset, m)?)?;
    m.add_function(wrap_pyfunction!(sample_subset, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(ekf_track, m)?)?;
    Ok(())
}
