//! Ridge bounding-box regression in the center-offset / log-scale parameterization.

use nalgebra::{DMatrix, DVector};

use super::BoundingBox;
use crate::error::{Error, Result};

/// `(t_x, t_y, t_w, t_h)` mapping `proposal` onto `truth`.
pub fn bbr_targets(proposal: &BoundingBox, truth: &BoundingBox) -> [f64; 4] {
    let (px, py) = proposal.center();
    let (gx, gy) = truth.center();
    [
        (gx - px) / proposal.w,
        (gy - py) / proposal.h,
        (truth.w / proposal.w).ln(),
        (truth.h / proposal.h).ln(),
    ]
}

/// Inverse of [`bbr_targets`]: applies offsets `t` to `proposal`.
pub fn bbr_decode(proposal: &BoundingBox, t: &[f64; 4]) -> BoundingBox {
    let (px, py) = proposal.center();
    let cx = px + t[0] * proposal.w;
    let cy = py + t[1] * proposal.h;
    let w = (proposal.w * t[2].exp()).max(f64::MIN_POSITIVE);
    let h = (proposal.h * t[3].exp()).max(f64::MIN_POSITIVE);
    BoundingBox {
        x: cx - w / 2.0,
        y: cy - h / 2.0,
        w,
        h,
    }
}

/// Four independent ridge regressors over a shared feature space, each with
/// an unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct BBoxRegressor {
    pub ridge: f64,
    feature_mean: Vec<f64>,
    target_mean: [f64; 4],
    /// `[dim, 4]`, column-major per target.
    weights: Option<DMatrix<f64>>,
}

impl BBoxRegressor {
    pub fn untrained(ridge: f64) -> Self {
        BBoxRegressor {
            ridge,
            feature_mean: Vec::new(),
            target_mean: [0.0; 4],
            weights: None,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.weights.is_some()
    }

    /// Closed-form fit. Uses the primal `(X'X + rI)^-1 X'Y` or the dual
    /// `X'(XX' + rI)^-1 Y`, whichever system is smaller; both are exact.
    pub fn fit(features: &[Vec<f64>], targets: &[[f64; 4]], ridge: f64) -> Result<Self> {
        let n = features.len();
        if n < 2 || targets.len() != n {
            return Err(Error::Config(format!(
                "bbox regression needs >= 2 samples with matching targets, got {n}/{}",
                targets.len()
            )));
        }
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(Error::Config(format!("ridge {ridge} must be > 0")));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::Config("bbox regression features must share a length".into()));
        }
        let mut feature_mean = vec![0.0; d];
        for f in features {
            for (m, v) in feature_mean.iter_mut().zip(f) {
                *m += v / n as f64;
            }
        }
        let mut target_mean = [0.0; 4];
        for t in targets {
            for k in 0..4 {
                target_mean[k] += t[k] / n as f64;
            }
        }
        let x = DMatrix::from_fn(n, d, |i, j| features[i][j] - feature_mean[j]);
        let y = DMatrix::from_fn(n, 4, |i, k| targets[i][k] - target_mean[k]);
        let weights = if d <= n {
            let mut a = x.tr_mul(&x);
            for i in 0..d {
                a[(i, i)] += ridge;
            }
            let chol = a.cholesky().ok_or(Error::Singular)?;
            chol.solve(&x.tr_mul(&y))
        } else {
            let mut k = &x * x.transpose();
            for i in 0..n {
                k[(i, i)] += ridge;
            }
            let chol = k.cholesky().ok_or(Error::Singular)?;
            x.tr_mul(&chol.solve(&y))
        };
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Singular);
        }
        Ok(BBoxRegressor {
            ridge,
            feature_mean,
            target_mean,
            weights: Some(weights),
        })
    }

    pub fn predict(&self, feature: &[f64]) -> Result<[f64; 4]> {
        let w = self.weights.as_ref().ok_or(Error::Untrained)?;
        if feature.len() != w.nrows() {
            return Err(Error::Shape {
                op: "bbr_apply",
                lhs: vec![feature.len()],
                rhs: vec![w.nrows()],
            });
        }
        let centered =
            DVector::from_iterator(feature.len(), feature.iter().zip(&self.feature_mean).map(|(f, m)| f - m));
        let t = w.tr_mul(&centered);
        Ok([
            t[0] + self.target_mean[0],
            t[1] + self.target_mean[1],
            t[2] + self.target_mean[2],
            t[3] + self.target_mean[3],
        ])
    }

    pub fn apply(&self, feature: &[f64], b: &BoundingBox) -> Result<BoundingBox> {
        Ok(bbr_decode(b, &self.predict(feature)?))
    }

    /// Weight column for target `k` (0..4).
    pub fn weights(&self, k: usize) -> Option<Vec<f64>> {
        self.weights.as_ref().map(|w| w.column(k).iter().copied().collect())
    }
}
