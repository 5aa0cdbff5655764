//! Constant-velocity extended Kalman filter over range readings.

use crate::env::{mask_observations, AnchorLayout, ObservationSet, Point, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::scheduler::SchedulingAction;

pub type Mat4 = [[f64; 4]; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: [f64; 4],
    pub covariance: Mat4,
}

impl EkfState {
    pub fn position(&self) -> Point {
        [self.mean[0], self.mean[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfConfig {
    pub sigma_acc: f64,
    pub sigma_n: f64,
    pub dt: f64,
}

impl EkfConfig {
    pub fn new(dt: f64) -> Self {
        Self { sigma_acc: 0.2, sigma_n: 1.0, dt }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [("sigma_acc", self.sigma_acc), ("sigma_n", self.sigma_n), ("dt", self.dt)] {
            if !(v > 0.0) || !v.is_finite() {
                errs.push(format!("ekf {name} must be positive, got {v}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

fn transition(dt: f64) -> Mat4 {
    [[1.0, 0.0, dt, 0.0], [0.0, 1.0, 0.0, dt], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

/// Piecewise-constant white acceleration, applied to each axis.
pub fn process_noise(sigma_acc: f64, dt: f64) -> Mat4 {
    let q = sigma_acc * sigma_acc;
    let (a, b, c) = (q * dt.powi(4) / 4.0, q * dt.powi(3) / 2.0, q * dt * dt);
    [[a, 0.0, b, 0.0], [0.0, a, 0.0, b], [b, 0.0, c, 0.0], [0.0, b, 0.0, c]]
}

fn matmul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose4(a: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn symmetrize(p: &mut Mat4) {
    for i in 0..4 {
        for j in i + 1..4 {
            let m = 0.5 * (p[i][j] + p[j][i]);
            p[i][j] = m;
            p[j][i] = m;
        }
    }
}

pub fn ekf_predict(state: &EkfState, cfg: &EkfConfig) -> EkfState {
    let f = transition(cfg.dt);
    let m = &state.mean;
    let mean = [m[0] + cfg.dt * m[2], m[1] + cfg.dt * m[3], m[2], m[3]];
    let mut covariance = matmul4(&matmul4(&f, &state.covariance), &transpose4(&f));
    let q = process_noise(cfg.sigma_acc, cfg.dt);
    for i in 0..4 {
        for j in 0..4 {
            covariance[i][j] += q[i][j];
        }
    }
    symmetrize(&mut covariance);
    EkfState { mean, covariance }
}

/// Inverse of a small dense matrix by Gauss-Jordan with partial pivoting.
fn invert(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                if f != 0.0 {
                    for j in 0..n {
                        a[r][j] -= f * a[c][j];
                        inv[r][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Kalman update for a general linearized measurement: `innovation = z − h(x̂)`,
/// rows of `jacobian` are ∂h/∂x, and `r_var` is the per-row noise variance.
/// The covariance uses the Joseph form.
pub fn kalman_update(state: &EkfState, innovation: &[f64], jacobian: &[[f64; 4]], r_var: f64) -> Option<EkfState> {
    let m = innovation.len();
    let p = &state.covariance;
    // P Hᵀ, 4 × m
    let pht: Vec<[f64; 4]> = jacobian.iter().map(|h| std::array::from_fn(|i| (0..4).map(|k| p[i][k] * h[k]).sum())).collect();
    let s: Vec<Vec<f64>> = (0..m)
        .map(|a| (0..m).map(|b| (0..4).map(|k| jacobian[a][k] * pht[b][k]).sum::<f64>() + if a == b { r_var } else { 0.0 }).collect())
        .collect();
    let s_inv = invert(s)?;
    // K = P Hᵀ S⁻¹, stored as m columns of length 4
    let gain: Vec<[f64; 4]> = (0..m).map(|b| std::array::from_fn(|i| (0..m).map(|a| pht[a][i] * s_inv[a][b]).sum())).collect();
    let mut mean = state.mean;
    for (kcol, nu) in gain.iter().zip(innovation) {
        for i in 0..4 {
            mean[i] += kcol[i] * nu;
        }
    }
    let mut ikh = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            ikh[i][j] = if i == j { 1.0 } else { 0.0 } - gain.iter().zip(jacobian).map(|(k, h)| k[i] * h[j]).sum::<f64>();
        }
    }
    let mut cov = matmul4(&matmul4(&ikh, p), &transpose4(&ikh));
    for i in 0..4 {
        for j in 0..4 {
            cov[i][j] += r_var * gain.iter().map(|k| k[i] * k[j]).sum::<f64>();
        }
    }
    symmetrize(&mut cov);
    Some(EkfState { mean, covariance: cov })
}

/// Range row of the measurement Jacobian at `position`.
pub fn range_jacobian(position: Point, anchor: Point) -> Option<[f64; 4]> {
    let (dx, dy) = (position[0] - anchor[0], position[1] - anchor[1]);
    let r = dx.hypot(dy);
    (r >= 1e-6).then(|| [dx / r, dy / r, 0.0, 0.0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfUpdate {
    pub state: EkfState,
    /// False when every row was singular and the state came back unchanged.
    pub applied: bool,
}

pub fn ekf_update(state: &EkfState, obs: &ObservationSet, cfg: &EkfConfig) -> Result<EkfUpdate> {
    if obs.is_empty() {
        return Err(Error::contract("ekf update needs at least one reading"));
    }
    let p = state.position();
    let mut rows = Vec::with_capacity(obs.len());
    let mut innovation = Vec::with_capacity(obs.len());
    for o in &obs.pairs {
        if let Some(h) = range_jacobian(p, o.anchor) {
            rows.push(h);
            innovation.push(o.distance - (p[0] - o.anchor[0]).hypot(p[1] - o.anchor[1]));
        }
    }
    if rows.is_empty() {
        return Ok(EkfUpdate { state: *state, applied: false });
    }
    match kalman_update(state, &innovation, &rows, cfg.sigma_n * cfg.sigma_n) {
        Some(s) => Ok(EkfUpdate { state: s, applied: true }),
        None => Err(Error::NonFinite { op: "ekf innovation covariance", node: 0 }),
    }
}

/// Linear least-squares position from ranges, using differences of squared
/// ranges against the first anchor.
pub fn trilaterate(obs: &ObservationSet) -> Result<Point> {
    if obs.len() < 3 {
        return Err(Error::Geometry(format!("trilateration needs at least 3 anchors, got {}", obs.len())));
    }
    let o0 = &obs.pairs[0];
    let (x0, y0, d0) = (o0.anchor[0], o0.anchor[1], o0.distance);
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut scale = 0.0f64;
    for o in &obs.pairs[1..] {
        let (xi, yi, di) = (o.anchor[0], o.anchor[1], o.distance);
        let (ax, ay) = (2.0 * (xi - x0), 2.0 * (yi - y0));
        let b = d0 * d0 - di * di + xi * xi - x0 * x0 + yi * yi - y0 * y0;
        a11 += ax * ax;
        a12 += ax * ay;
        a22 += ay * ay;
        b1 += ax * b;
        b2 += ay * b;
        scale = scale.max(ax * ax + ay * ay);
    }
    let det = a11 * a22 - a12 * a12;
    if !(det > 1e-9 * scale * scale) {
        return Err(Error::Geometry("anchors are collinear; position is not identifiable".into()));
    }
    Ok([(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det])
}

pub fn ekf_init(obs: &ObservationSet) -> Result<EkfState> {
    let p = trilaterate(obs)?;
    let mut covariance = [[0.0; 4]; 4];
    for (i, row) in covariance.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    Ok(EkfState { mean: [p[0], p[1], 0.0, 0.0], covariance })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfRun {
    pub positions: Vec<Point>,
    /// Steps whose update was skipped (no usable reading).
    pub skipped: usize,
}

/// Filters one record. The state is initialized from every reading at the
/// first step; later steps predict and then update with the readings picked
/// by `schedule(t)` (t is 1-based).
pub fn ekf_run(
    record: &TrajectoryRecord,
    layout: &AnchorLayout,
    mut schedule: impl FnMut(usize) -> SchedulingAction,
    cfg: &EkfConfig,
) -> Result<EkfRun> {
    cfg.validate()?;
    let first = record.steps.first().ok_or_else(|| Error::contract("empty trajectory"))?;
    let mut state = ekf_init(&ObservationSet::all(&first.measurements, layout))?;
    let mut positions = vec![state.position()];
    let mut skipped = 0;
    for step in &record.steps[1..] {
        state = ekf_predict(&state, cfg);
        let masked = mask_observations(&step.measurements, layout, &schedule(step.t))?;
        if masked.set.is_empty() {
            skipped += 1;
        } else {
            let u = ekf_update(&state, &masked.set, cfg)?;
            skipped += usize::from(!u.applied);
            state = u.state;
        }
        positions.push(state.position());
    }
    Ok(EkfRun { positions, skipped })
}

/// True when `p` is symmetric within `tol` and Cholesky succeeds.
pub fn is_spd(p: &Mat4, tol: f64) -> bool {
    for i in 0..4 {
        for j in 0..4 {
            if (p[i][j] - p[j][i]).abs() > tol {
                return false;
            }
        }
    }
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let s: f64 = p[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return false;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Observation, ObservationSet};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs(anchors: &[Point], target: Point) -> ObservationSet {
        ObservationSet::new(
            anchors
                .iter()
                .enumerate()
                .map(|(i, a)| Observation { anchor_id: i as u32 + 1, distance: (target[0] - a[0]).hypot(target[1] - a[1]), anchor: *a })
                .collect(),
        )
    }

    fn unit_cov() -> Mat4 {
        let mut c = [[0.0; 4]; 4];
        for (i, r) in c.iter_mut().enumerate() {
            r[i] = 1.0;
        }
        c
    }

    #[test]
    fn predict_moves_with_velocity() {
        let s = EkfState { mean: [0.0, 0.0, 1.0, 2.0], covariance: unit_cov() };
        let p = ekf_predict(&s, &EkfConfig::new(0.1));
        for (a, b) in p.mean.iter().zip([0.1, 0.2, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(is_spd(&p.covariance, 1e-12));
    }

    #[test]
    fn zero_acceleration_noise_leaves_trace_to_transition() {
        let s = EkfState { mean: [0.0; 4], covariance: unit_cov() };
        let cfg = EkfConfig { sigma_acc: 0.0, sigma_n: 1.0, dt: 0.1 };
        let p = ekf_predict(&s, &cfg);
        let f = transition(0.1);
        let fpf = matmul4(&matmul4(&f, &s.covariance), &transpose4(&f));
        let tr = |m: &Mat4| (0..4).map(|i| m[i][i]).sum::<f64>();
        assert_eq!(tr(&p.covariance), tr(&fpf));
    }

    #[test]
    fn exact_reading_contracts_error() {
        let anchors = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let target = [2.0, 1.5];
        let prior = EkfState { mean: [2.6, 1.1, 0.0, 0.0], covariance: unit_cov() };
        let post = ekf_update(&prior, &obs(&anchors, target), &EkfConfig::new(0.1)).unwrap();
        let err = |s: &EkfState| (s.mean[0] - target[0]).hypot(s.mean[1] - target[1]);
        assert!(post.applied);
        assert!(err(&post.state) < err(&prior));
    }

    #[test]
    fn uninformative_reading_changes_nothing() {
        let prior = EkfState { mean: [2.6, 1.1, 0.3, 0.0], covariance: unit_cov() };
        let cfg = EkfConfig { sigma_n: 1e9, ..EkfConfig::new(0.1) };
        let post = ekf_update(&prior, &obs(&[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]], [2.0, 1.5]), &cfg).unwrap();
        for i in 0..4 {
            assert!((post.state.mean[i] - prior.mean[i]).abs() < 1e-6);
            for j in 0..4 {
                assert!((post.state.covariance[i][j] - prior.covariance[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reading_at_the_anchor_is_skipped() {
        let prior = EkfState { mean: [1.0, 1.0, 0.0, 0.0], covariance: unit_cov() };
        let o = obs(&[[1.0, 1.0]], [1.0, 1.0]);
        let u = ekf_update(&prior, &o, &EkfConfig::new(0.1)).unwrap();
        assert!(!u.applied);
        assert_eq!(u.state, prior);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let anchor = [1.3, -0.4];
        for p in [[0.2, 0.9], [5.0, 3.0], [1.3 + 2e-3, -0.4]] {
            let h = range_jacobian(p, anchor).unwrap();
            let r = |q: Point| (q[0] - anchor[0]).hypot(q[1] - anchor[1]);
            let e = 1e-7;
            let fx = (r([p[0] + e, p[1]]) - r([p[0] - e, p[1]])) / (2.0 * e);
            let fy = (r([p[0], p[1] + e]) - r([p[0], p[1] - e])) / (2.0 * e);
            assert!((h[0] - fx).abs() < 1e-6 && (h[1] - fy).abs() < 1e-6);
        }
    }

    #[test]
    fn trilateration_examples() {
        let anchors = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let p = ekf_init(&obs(&anchors, [1.0, 1.0])).unwrap();
        assert!((p.mean[0] - 1.0).abs() < 1e-9 && (p.mean[1] - 1.0).abs() < 1e-9);
        assert_eq!(&p.mean[2..], &[0.0, 0.0]);
        assert!(ekf_init(&obs(&anchors[..2], [1.0, 1.0])).is_err());
        assert!(ekf_init(&obs(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [1.0, 1.0])).is_err());
    }

    #[test]
    fn matches_linear_kalman_filter() {
        // Direct x/y readings: H = [I₂ 0], so the extended filter is the
        // ordinary one. Reference written with explicit 4×4 algebra.
        let cfg = EkfConfig { sigma_acc: 0.3, sigma_n: 0.5, dt: 0.2 };
        let mut s = EkfState { mean: [0.0, 0.0, 0.0, 0.0], covariance: unit_cov() };
        let mut mean = s.mean;
        let mut p = s.covariance;
        let zs = [[0.1, 0.05], [0.3, 0.1], [0.45, 0.2], [0.7, 0.22]];
        for z in zs {
            s = ekf_predict(&s, &cfg);
            s = kalman_update(&s, &[z[0] - s.mean[0], z[1] - s.mean[1]], &[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]], 0.25)
                .unwrap();

            let f = transition(cfg.dt);
            mean = std::array::from_fn(|i| (0..4).map(|k| f[i][k] * mean[k]).sum());
            p = matmul4(&matmul4(&f, &p), &transpose4(&f));
            let q = process_noise(cfg.sigma_acc, cfg.dt);
            for i in 0..4 {
                for j in 0..4 {
                    p[i][j] += q[i][j];
                }
            }
            let s2 = [[p[0][0] + 0.25, p[0][1]], [p[1][0], p[1][1] + 0.25]];
            let det = s2[0][0] * s2[1][1] - s2[0][1] * s2[1][0];
            let si = [[s2[1][1] / det, -s2[0][1] / det], [-s2[1][0] / det, s2[0][0] / det]];
            let k: [[f64; 2]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| p[i][0] * si[0][j] + p[i][1] * si[1][j]));
            let nu = [z[0] - mean[0], z[1] - mean[1]];
            for i in 0..4 {
                mean[i] += k[i][0] * nu[0] + k[i][1] * nu[1];
            }
            let mut np = p;
            for i in 0..4 {
                for j in 0..4 {
                    np[i][j] = p[i][j] - (k[i][0] * p[0][j] + k[i][1] * p[1][j]);
                }
            }
            p = np;
            for i in 0..4 {
                assert!((mean[i] - s.mean[i]).abs() < 1e-12);
                for j in 0..4 {
                    assert!((p[i][j] - s.covariance[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn covariance_stays_spd_over_long_runs(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = EkfConfig { sigma_acc: rng.random_range(0.01..2.0), sigma_n: rng.random_range(0.01..3.0), dt: rng.random_range(0.01..0.5) };
            let mut s = EkfState { mean: [0.0; 4], covariance: unit_cov() };
            for _ in 0..10_000 {
                s = ekf_predict(&s, &cfg);
                let n = rng.random_range(1..=5);
                let set = ObservationSet::new(
                    (0..n)
                        .map(|i| Observation {
                            anchor_id: i,
                            anchor: [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)],
                            distance: rng.random_range(0.0..30.0),
                        })
                        .collect(),
                );
                s = ekf_update(&s, &set, &cfg).unwrap().state;
                prop_assert!(s.mean.iter().all(|m| m.is_finite()));
                prop_assert!(is_spd(&s.covariance, 1e-9), "lost SPD: {:?}", s.covariance);
            }
        }
    }
}
