use crate::env::Point;
use crate::error::{Error, Result};

/// Tracking errors of one method, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub mae: f64,
    pub rmse: f64,
    pub p50: f64,
    pub p90: f64,
    pub n_traj: usize,
    pub n_steps: usize,
}

/// Estimated and true positions of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub traj_id: u32,
    pub truth: Vec<Point>,
    pub estimates: Vec<Point>,
}

pub fn position_errors(estimates: &[Point], truth: &[Point]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() {
        return Err(Error::contract(format!(
            "{} estimates for {} true positions",
            estimates.len(),
            truth.len()
        )));
    }
    Ok(estimates.iter().zip(truth).map(|(e, t)| (e[0] - t[0]).hypot(e[1] - t[1])).collect())
}

pub fn mean_error(estimates: &[Point], truth: &[Point]) -> Result<f64> {
    let e = position_errors(estimates, truth)?;
    if e.is_empty() {
        return Err(Error::contract("no positions to score"));
    }
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Percentile of sorted values with linear interpolation between order
/// statistics at rank `q·(n−1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of nothing");
    let rank = (q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64).clamp(0.0, (sorted.len() - 1) as f64);
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn compute_metrics(method: &str, tracks: &[Track]) -> Result<MetricReport> {
    let mut e = Vec::new();
    for t in tracks {
        e.extend(position_errors(&t.estimates, &t.truth)?);
    }
    if e.is_empty() {
        return Err(Error::contract(format!("no positions to score for `{method}`")));
    }
    let n = e.len() as f64;
    let mae = e.iter().sum::<f64>() / n;
    let rmse = (e.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    e.sort_by(f64::total_cmp);
    let report = MetricReport {
        method: method.to_string(),
        // Rounding can leave the mean a hair above the quadratic mean.
        mae: mae.min(rmse),
        rmse,
        p50: percentile(&e, 0.5),
        p90: percentile(&e, 0.9),
        n_traj: tracks.len(),
        n_steps: e.len(),
    };
    debug_assert!(report.mae <= report.rmse && report.p50 <= report.p90);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track_with_errors(errors: &[f64]) -> Track {
        Track {
            traj_id: 0,
            truth: vec![[0.0, 0.0]; errors.len()],
            estimates: errors.iter().map(|&e| [0.0, e]).collect(),
        }
    }

    #[test]
    fn exact_estimates_score_zero() {
        let t = Track { traj_id: 1, truth: vec![[1.0, 2.0], [3.0, -1.0]], estimates: vec![[1.0, 2.0], [3.0, -1.0]] };
        let m = compute_metrics("x", &[t]).unwrap();
        assert_eq!((m.mae, m.rmse, m.p50, m.p90), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((m.n_traj, m.n_steps), (1, 2));
    }

    #[test]
    fn two_errors() {
        let m = compute_metrics("x", &[track_with_errors(&[3.0, 4.0])]).unwrap();
        assert_eq!(m.mae, 3.5);
        assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.p50, 3.5);
    }

    #[test]
    fn hundred_errors_percentiles() {
        let e: Vec<f64> = (1..=100).map(f64::from).collect();
        let m = compute_metrics("x", &[track_with_errors(&e)]).unwrap();
        // rank 0.9·99 = 89.1 lies between the 90th and 91st smallest.
        assert!((m.p90 - 90.1).abs() < 1e-9);
        assert!((m.p50 - 50.5).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let t = Track { traj_id: 0, truth: vec![[0.0, 0.0]; 2], estimates: vec![[0.0, 0.0]] };
        assert!(matches!(compute_metrics("x", &[t]), Err(Error::Contract(_))));
        assert!(compute_metrics("x", &[]).is_err());
    }

    proptest! {
        #[test]
        fn report_invariants(errors in prop::collection::vec(0.0f64..50.0, 1..60)) {
            let m = compute_metrics("x", &[track_with_errors(&errors)]).unwrap();
            prop_assert!(m.mae <= m.rmse);
            prop_assert!(m.p50 <= m.p90);
            prop_assert!(m.mae >= 0.0 && m.p50 >= 0.0);
        }
    }
}
