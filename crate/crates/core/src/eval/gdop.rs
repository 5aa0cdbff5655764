use crate::env::Point;

/// Two-dimensional geometric dilution of precision of ranging from
/// `anchors` at `p`. Anchors on top of `p` carry no bearing and are skipped;
/// degenerate geometry gives `f64::INFINITY`.
pub fn gdop(p: Point, anchors: &[Point]) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let mut rows = 0;
    for q in anchors {
        let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
        let r = dx.hypot(dy);
        if r < 1e-9 {
            continue;
        }
        let (ux, uy) = (dx / r, dy / r);
        a += ux * ux;
        b += ux * uy;
        c += uy * uy;
        rows += 1;
    }
    let det = a * c - b * b;
    // Gram determinant of unit rows is a sum of squared sines; below this
    // the bearings are collinear up to rounding.
    if rows < 2 || det <= 1e-12 {
        return f64::INFINITY;
    }
    ((a + c) / det).sqrt()
}
