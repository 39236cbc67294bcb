//! Reporting metrics over feeder loads.

use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::model::feeder_violation;

/// Default threshold (MW) for counting overloaded feeders.
pub const VIOLATION_THRESHOLD_MW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `Σ_s v_s`, MW.
    pub total_max_violation: f64,
    pub per_feeder_violation: Vec<f64>,
    pub threshold: f64,
    pub feeders_over_threshold: usize,
    /// Peak/valley of the aggregate load; `None` when its minimum is not positive.
    pub pvr_load: Option<f64>,
    /// Peak/valley of the aggregate overload; `None` when its minimum is not positive.
    pub pvr_overload: Option<f64>,
}

/// `max/min` of a series, `None` when `min <= 0` or the series is empty.
pub fn peak_valley_ratio(series: &[f64]) -> Option<f64> {
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min > 0.0 && min.is_finite()).then(|| max / min)
}

pub fn metrics(loads: &Mat, caps: &Mat, threshold: f64) -> MetricsReport {
    assert_eq!((loads.rows(), loads.cols()), (caps.rows(), caps.cols()));
    let per: Vec<f64> = (0..loads.rows())
        .map(|s| feeder_violation(loads.row(s), caps.row(s)))
        .collect();
    let t_len = loads.cols();
    let mut agg = vec![0.0; t_len];
    let mut over = vec![0.0; t_len];
    for s in 0..loads.rows() {
        for t in 0..t_len {
            let l = loads.get(s, t);
            agg[t] += l;
            over[t] += (l - caps.get(s, t)).max(0.0);
        }
    }
    MetricsReport {
        total_max_violation: per.iter().sum(),
        feeders_over_threshold: per.iter().filter(|v| **v > threshold).count(),
        per_feeder_violation: per,
        threshold,
        pvr_load: peak_valley_ratio(&agg),
        pvr_overload: peak_valley_ratio(&over),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn under_capacity() {
        let loads = Mat::from_rows(&[[0.5, 0.2]], 2);
        let caps = Mat::from_rows(&[[1.0, 1.0]], 2);
        let m = metrics(&loads, &caps, 0.1);
        assert_eq!(m.total_max_violation, 0.0);
        assert_eq!(m.feeders_over_threshold, 0);
        assert_eq!(m.pvr_overload, None);
        assert_eq!(m.pvr_load, Some(2.5));
    }

    #[test]
    fn constant_load_and_threshold_count() {
        let loads = Mat::from_rows(&[[1.05, 0.3], [0.4, 1.2]], 2);
        let caps = Mat::from_rows(&[[1.0, 1.0], [1.0, 1.0]], 2);
        let m = metrics(&loads, &caps, 0.1);
        assert_eq!(m.feeders_over_threshold, 1);
        assert!((m.total_max_violation - 0.25).abs() < 1e-12);
        let flat = Mat::from_rows(&[[0.7, 0.7, 0.7]], 3);
        assert_eq!(metrics(&flat, &Mat::zeros(1, 3), 0.1).pvr_load, Some(1.0));
    }
}
