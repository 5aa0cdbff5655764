use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::geometry::{MapRegion, Point};
use super::layout::{AnchorId, AnchorLayout};
use super::noise::{simulate_measurement, NoiseModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// 1-based time index.
    pub t: usize,
    pub position: Option<Point>,
    pub velocity: Option<[f64; 2]>,
    pub measurements: BTreeMap<AnchorId, f64>,
}

/// Ground-truth path (when known) and per-anchor ranges for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub id: u32,
    pub dt: f64,
    pub steps: Vec<Step>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.steps.iter().all(|s| s.position.is_some())
    }

    pub fn positions(&self) -> Option<Vec<Point>> {
        self.steps.iter().map(|s| s.position).collect()
    }

    /// Steps `start..start + len` (0-based) renumbered from t = 1.
    pub fn window(&self, start: usize, len: usize) -> TrajectoryRecord {
        let steps = self.steps[start..start + len]
            .iter()
            .enumerate()
            .map(|(i, s)| Step { t: i + 1, ..s.clone() })
            .collect();
        TrajectoryRecord { id: self.id, dt: self.dt, steps }
    }

    /// Same record keeping only readings from the given anchors.
    pub fn restricted_to(&self, ids: &[AnchorId]) -> TrajectoryRecord {
        let steps = self
            .steps
            .iter()
            .map(|s| Step {
                measurements: s.measurements.iter().filter(|(k, _)| ids.contains(k)).map(|(k, v)| (*k, *v)).collect(),
                ..s.clone()
            })
            .collect();
        TrajectoryRecord { id: self.id, dt: self.dt, steps }
    }

    pub fn validate(&self, map: Option<&MapRegion>) -> Result<()> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.t != i + 1 {
                return Err(Error::contract(format!("trajectory {}: step {} has time index {}", self.id, i + 1, s.t)));
            }
            if let (Some(p), Some(m)) = (s.position, map) {
                if !m.contains(p) {
                    return Err(Error::Geometry(format!("trajectory {} leaves the map at t = {}", self.id, s.t)));
                }
            }
            if s.measurements.values().any(|d| !(*d >= 0.0)) {
                return Err(Error::contract(format!("trajectory {}: negative distance at t = {}", self.id, s.t)));
            }
        }
        Ok(())
    }
}

/// Random-turn, constant-speed target motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    pub speed_min: f64,
    pub speed_max: f64,
    /// Standard deviation of the turn rate, rad/s.
    pub turn_rate_stddev: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self { speed_min: 0.4, speed_max: 1.2, turn_rate_stddev: 0.6 }
    }
}

/// Starts uniformly inside the map (0.5 m margin when it fits) with a
/// uniform heading and a speed uniform in the configured range.
pub fn generate_trajectory(
    map: &MapRegion,
    motion: &MotionParams,
    steps: usize,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<TrajectoryRecord> {
    let mx = 0.5f64.min(0.25 * map.width);
    let my = 0.5f64.min(0.25 * map.height);
    let start = [rng.random_range(mx..=map.width - mx), rng.random_range(my..=map.height - my)];
    let heading = rng.random_range(-PI..PI);
    let speed = if motion.speed_max > motion.speed_min {
        rng.random_range(motion.speed_min..=motion.speed_max)
    } else {
        motion.speed_min
    };
    generate_trajectory_from(map, motion, start, heading, speed, steps, dt, rng)
}

/// Deterministic start variant of [`generate_trajectory`]. Headings are
/// reflected at the map boundary; velocity at step t > 1 is the position
/// increment divided by `dt`.
#[allow(clippy::too_many_arguments)]
pub fn generate_trajectory_from(
    map: &MapRegion,
    motion: &MotionParams,
    start: Point,
    mut heading: f64,
    speed: f64,
    steps: usize,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<TrajectoryRecord> {
    if steps == 0 || !(dt > 0.0) {
        return Err(Error::contract(format!("trajectory needs steps >= 1 and dt > 0 (got {steps}, {dt})")));
    }
    if !map.contains(start) {
        return Err(Error::Geometry(format!("start {start:?} outside the map")));
    }
    if !(speed >= 0.0) || speed * dt >= 0.5 * map.width.min(map.height) {
        return Err(Error::contract(format!("speed {speed} m/s too large for dt {dt} on this map")));
    }
    let mut p = start;
    let mut out = Vec::with_capacity(steps);
    out.push(Step {
        t: 1,
        position: Some(p),
        velocity: Some([speed * heading.cos(), speed * heading.sin()]),
        measurements: BTreeMap::new(),
    });
    for t in 2..=steps {
        let w: f64 = StandardNormal.sample(rng);
        heading += motion.turn_rate_stddev * w * dt;
        let mut v = [speed * heading.cos(), speed * heading.sin()];
        let mut next = [p[0] + v[0] * dt, p[1] + v[1] * dt];
        if next[0] < 0.0 || next[0] > map.width {
            heading = PI - heading;
        }
        if next[1] < 0.0 || next[1] > map.height {
            heading = -heading;
        }
        if !map.contains(next) {
            v = [speed * heading.cos(), speed * heading.sin()];
            next = [p[0] + v[0] * dt, p[1] + v[1] * dt];
            next = [next[0].clamp(0.0, map.width), next[1].clamp(0.0, map.height)];
        }
        let vel = [(next[0] - p[0]) / dt, (next[1] - p[1]) / dt];
        p = next;
        out.push(Step { t, position: Some(p), velocity: Some(vel), measurements: BTreeMap::new() });
    }
    Ok(TrajectoryRecord { id: 0, dt, steps: out })
}

/// Fills every step with one simulated reading per anchor.
pub fn simulate_measurements(
    record: &mut TrajectoryRecord,
    layout: &AnchorLayout,
    map: &MapRegion,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) {
    for s in &mut record.steps {
        let p = s.position.expect("simulation needs ground truth");
        for a in layout.anchors() {
            s.measurements.insert(a.id, simulate_measurement(p, a.position, noise, &map.walls, rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn straight_line_without_turning() {
        let map = MapRegion::residential_floor();
        let motion = MotionParams { speed_min: 1.0, speed_max: 1.0, turn_rate_stddev: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = generate_trajectory_from(&map, &motion, map.center(), 0.0, 1.0, 3, 0.1, &mut rng).unwrap();
        let xs: Vec<f64> = r.steps.iter().map(|s| s.position.unwrap()[0]).collect();
        assert!((xs[1] - xs[0] - 0.1).abs() < 1e-12);
        assert!((xs[2] - xs[1] - 0.1).abs() < 1e-12);
        assert!(r.steps.iter().all(|s| s.position.unwrap()[1] == map.center()[1]));
    }

    #[test]
    fn stays_inside_and_keeps_speed() {
        let map = MapRegion::new(3.0, 2.0, vec![]).unwrap();
        let motion = MotionParams { speed_min: 0.5, speed_max: 1.5, turn_rate_stddev: 2.0 };
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = generate_trajectory(&map, &motion, 500, 0.1, &mut rng).unwrap();
            r.validate(Some(&map)).unwrap();
            for w in r.steps.windows(2) {
                let (a, b) = (w[0].position.unwrap(), w[1].position.unwrap());
                let v = w[1].velocity.unwrap();
                assert!(((b[0] - a[0]) / 0.1 - v[0]).abs() < 1e-9);
                assert!(((b[1] - a[1]) / 0.1 - v[1]).abs() < 1e-9);
                let speed = v[0].hypot(v[1]);
                assert!(speed <= 1.5 + 1e-9 && speed >= 0.5 - 1e-9, "speed {speed}");
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let map = MapRegion::residential_floor();
        let gen = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            generate_trajectory(&map, &MotionParams::default(), 50, 0.1, &mut rng).unwrap()
        };
        assert_eq!(gen(9), gen(9));
        assert_ne!(gen(9), gen(10));
    }
}
