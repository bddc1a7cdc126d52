use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Largest center-error threshold of the precision curve, in pixels.
pub const DP_MAX: usize = 50;
/// Threshold at which precision is reported.
pub const DP_AT: usize = 20;
/// Number of overlap thresholds `0, 0.05, ..., 1`.
pub const OS_POINTS: usize = 21;

/// Overlap threshold `k` of the success curve.
pub fn os_threshold(k: usize) -> f64 {
    k as f64 / (OS_POINTS - 1) as f64
}

/// One-pass evaluation scores of a box sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    /// Mean center location error in pixels.
    pub cle: f64,
    /// Precision at thresholds `0..=50` pixels.
    pub dp_curve: Vec<f64>,
    pub dp20: f64,
    /// Success rate at overlap thresholds `0, 0.05, ..., 1`.
    pub os_curve: Vec<f64>,
    pub auc: f64,
    pub os50: f64,
}

impl MetricsReport {
    /// Checks curve shape and rate ranges.
    pub fn check(&self) -> Result<()> {
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        let ok = self.dp_curve.len() == DP_MAX + 1
            && self.os_curve.len() == OS_POINTS
            && self.dp_curve.windows(2).all(|w| w[0] <= w[1])
            && self.os_curve.windows(2).all(|w| w[0] >= w[1])
            && self.dp_curve.iter().chain(&self.os_curve).all(in_unit)
            && [self.dp20, self.auc, self.os50].iter().all(in_unit)
            && self.cle >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("malformed metrics report {self:?}")))
        }
    }

    /// Field-wise mean of several reports; `frames` is summed.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let n = reports.len() as f64;
        let first = reports.first()?;
        let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_curve = |f: &dyn Fn(&MetricsReport) -> &Vec<f64>| {
            (0..f(first).len())
                .map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / n)
                .collect::<Vec<f64>>()
        };
        Some(MetricsReport {
            frames: reports.iter().map(|r| r.frames).sum(),
            cle: avg(&|r| r.cle),
            dp_curve: avg_curve(&|r| &r.dp_curve),
            dp20: avg(&|r| r.dp20),
            os_curve: avg_curve(&|r| &r.os_curve),
            auc: avg(&|r| r.auc),
            os50: avg(&|r| r.os50),
        })
    }
}

/// Scores `predicted` against `truth` frame by frame.
pub fn compute_metrics(predicted: &[BoundingBox], truth: &[BoundingBox]) -> Result<MetricsReport> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Config(format!(
            "metrics need equal non-empty box lists, got {} predicted and {} truth",
            predicted.len(),
            truth.len()
        )));
    }
    let n = predicted.len();
    let dist: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| p.center_distance(t)).collect();
    let iou: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| p.iou(t)).collect();
    let rate = |count: usize| count as f64 / n as f64;
    let dp_curve: Vec<f64> = (0..=DP_MAX)
        .map(|tau| rate(dist.iter().filter(|&&d| d <= tau as f64).count()))
        .collect();
    let os_curve: Vec<f64> = (0..OS_POINTS)
        .map(|k| rate(iou.iter().filter(|&&o| o >= os_threshold(k)).count()))
        .collect();
    let report = MetricsReport {
        frames: n,
        cle: dist.iter().sum::<f64>() / n as f64,
        dp20: dp_curve[DP_AT],
        auc: os_curve.iter().sum::<f64>() / OS_POINTS as f64,
        os50: os_curve[(OS_POINTS - 1) / 2],
        dp_curve,
        os_curve,
    };
    report.check()?;
    Ok(report)
}
