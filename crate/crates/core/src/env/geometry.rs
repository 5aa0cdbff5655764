use crate::error::{Error, Result};

/// Planar position in meters.
pub type Point = [f64; 2];

/// Euclidean distance between a target position and an anchor.
pub fn true_distance(p: Point, anchor: Point) -> f64 {
    (p[0] - anchor[0]).hypot(p[1] - anchor[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub a: Point,
    pub b: Point,
}

impl Wall {
    pub fn new(a: Point, b: Point) -> Result<Self> {
        if true_distance(a, b) == 0.0 {
            return Err(Error::Geometry(format!("zero-length wall at {a:?}")));
        }
        Ok(Self { a, b })
    }
}

/// Rectangular floor `[0, width] × [0, height]` with optional interior walls.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRegion {
    pub width: f64,
    pub height: f64,
    pub walls: Vec<Wall>,
}

impl MapRegion {
    pub fn new(width: f64, height: f64, walls: Vec<Wall>) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::Geometry(format!("map must have positive extent, got {width} x {height}")));
        }
        Ok(Self { width, height, walls })
    }

    /// A 9.18 m × 12.06 m house floor with a few brick partition walls.
    pub fn residential_floor() -> Self {
        let w = |a: Point, b: Point| Wall::new(a, b).expect("non-degenerate wall");
        Self {
            width: 9.18,
            height: 12.06,
            walls: vec![
                w([0.0, 6.0], [5.6, 6.0]),
                w([6.8, 6.0], [9.18, 6.0]),
                w([4.5, 6.0], [4.5, 9.8]),
                w([5.6, 3.0], [9.18, 3.0]),
                w([2.8, 0.0], [2.8, 2.4]),
            ],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= 0.0 && p[0] <= self.width && p[1] >= 0.0 && p[1] <= self.height
    }

    pub fn center(&self) -> Point {
        [0.5 * self.width, 0.5 * self.height]
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Number of walls crossed by the open segment `p → anchor`. Crossings that
/// land on the same point (e.g. through a corner shared by two walls) are
/// counted once; collinear contact is not a crossing.
pub fn wall_crossings(p: Point, anchor: Point, walls: &[Wall]) -> usize {
    const EPS: f64 = 1e-12;
    let r = [anchor[0] - p[0], anchor[1] - p[1]];
    let mut hits: Vec<Point> = Vec::new();
    for w in walls {
        let s = [w.b[0] - w.a[0], w.b[1] - w.a[1]];
        let denom = r[0] * s[1] - r[1] * s[0];
        if denom.abs() < EPS {
            continue;
        }
        let qp = [w.a[0] - p[0], w.a[1] - p[1]];
        let t = (qp[0] * s[1] - qp[1] * s[0]) / denom;
        let u = (qp[0] * r[1] - qp[1] * r[0]) / denom;
        if t > EPS && t < 1.0 - EPS && (-EPS..=1.0 + EPS).contains(&u) {
            let hit = [p[0] + t * r[0], p[1] + t * r[1]];
            if !hits.iter().any(|h| true_distance(*h, hit) < 1e-9) {
                hits.push(hit);
            }
        }
    }
    hits.len()
}

/// Whether three points are collinear up to `tol` (twice the triangle area).
pub fn collinear(a: Point, b: Point, c: Point, tol: f64) -> bool {
    cross(a, b, c).abs() <= tol
}
