use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::BoundingBox;
use crate::error::{Error, Result};

/// Gaussian proposal distribution around a reference box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub count: usize,
    /// Translation std per axis, as a multiple of `mean(w, h)`.
    pub translation: f64,
    /// Scale multiplier base; a box is scaled by `scale_step^s`.
    pub scale_step: f64,
    /// Std of the exponent `s`.
    pub scale_std: f64,
    /// Smallest emitted width/height in pixels.
    pub min_size: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            count: 256,
            translation: 0.3,
            scale_step: 1.05,
            scale_std: 0.5,
            min_size: 4.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("sampler count must be >= 1".into()));
        }
        if !(self.scale_step > 1.0) || !self.scale_step.is_finite() {
            return Err(Error::Config("sampler scale_step must be > 1".into()));
        }
        if !(self.translation >= 0.0 && self.scale_std >= 0.0 && self.min_size > 0.0)
            || !(self.translation.is_finite() && self.scale_std.is_finite())
        {
            return Err(Error::Config(
                "sampler translation/scale_std must be >= 0 and min_size > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Frame extent boxes are clamped into.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameBounds {
    pub width: f64,
    pub height: f64,
}

impl FrameBounds {
    pub fn new(width: usize, height: usize) -> Self {
        FrameBounds {
            width: width as f64,
            height: height as f64,
        }
    }

    /// Clamps `b` into the frame with extents at least `min_size`.
    pub fn clamp(&self, b: &BoundingBox, min_size: f64) -> BoundingBox {
        let w = b.w.clamp(min_size, self.width);
        let h = b.h.clamp(min_size, self.height);
        let (cx, cy) = b.center();
        BoundingBox {
            x: (cx - w / 2.0).clamp(0.0, self.width - w),
            y: (cy - h / 2.0).clamp(0.0, self.height - h),
            w,
            h,
        }
    }
}

/// Draws `cfg.count` boxes around `center`. Three standard normals are always
/// consumed per box, so the stream position does not depend on the config.
pub fn sample_proposals<R: Rng + ?Sized>(
    center: &BoundingBox,
    cfg: &SamplerConfig,
    bounds: FrameBounds,
    rng: &mut R,
) -> Result<Vec<BoundingBox>> {
    cfg.validate()?;
    if !center.is_valid() {
        return Err(Error::DegenerateBox {
            w: center.w,
            h: center.h,
        });
    }
    if bounds.width < cfg.min_size || bounds.height < cfg.min_size {
        return Err(Error::Config(format!(
            "frame {}x{} cannot hold a {}px box",
            bounds.width, bounds.height, cfg.min_size
        )));
    }
    let (cx, cy) = center.center();
    let t_std = cfg.translation * (center.w + center.h) / 2.0;
    let log_step = cfg.scale_step.ln();
    Ok((0..cfg.count)
        .map(|_| {
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            let zs: f64 = rng.sample(StandardNormal);
            let mult = (zs * cfg.scale_std * log_step).exp();
            let b = BoundingBox {
                x: cx + zx * t_std - center.w * mult / 2.0,
                y: cy + zy * t_std - center.h * mult / 2.0,
                w: center.w * mult,
                h: center.h * mult,
            };
            bounds.clamp(&b, cfg.min_size)
        })
        .collect())
}
