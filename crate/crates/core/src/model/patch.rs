use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// An 8-bit raster held as `f32` samples in `[0, 255]`, row-major HWC.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Config(format!(
                "frame {width}x{height} with {channels} channels"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::TensorSize {
                shape: vec![height, width, channels],
                len: data.len(),
            });
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (channels, width, height, bytes) = match img.color().channel_count() {
            1 | 2 => {
                let g = img.into_luma8();
                (1, g.width(), g.height(), g.into_raw())
            }
            _ => {
                let rgb = img.into_rgb8();
                (3, rgb.width(), rgb.height(), rgb.into_raw())
            }
        };
        Self::new(
            width as usize,
            height as usize,
            channels,
            bytes.into_iter().map(f32::from).collect(),
        )
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Sample of channel `c` as seen by a `want`-channel consumer: gray frames
    /// are replicated, RGB frames collapse to luma for one-channel consumers.
    fn sample(&self, x: usize, y: usize, c: usize, want: usize) -> f32 {
        let base = (y * self.width + x) * self.channels;
        match (self.channels, want) {
            (1, _) => self.data[base],
            (3, 1) => {
                0.299 * self.data[base] + 0.587 * self.data[base + 1] + 0.114 * self.data[base + 2]
            }
            _ => self.data[base + c],
        }
    }
}

/// Fixed-size network input geometry and per-channel normalization
/// `normalized = (raw - offset[c]) * scale[c]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
    /// Context margin added on every side, as a fraction of the box extent.
    pub context: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            height: 64,
            width: 64,
            channels: 3,
            offset: vec![127.5; 3],
            scale: vec![1.0 / 255.0; 3],
            context: 0.2,
        }
    }
}

impl PatchSpec {
    /// Identity normalization, no context.
    pub fn raw(height: usize, width: usize, channels: usize) -> Self {
        PatchSpec {
            height,
            width,
            channels,
            offset: vec![0.0; channels],
            scale: vec![1.0; channels],
            context: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config(format!(
                "patch {}x{}x{}: sizes must be positive and channels 1 or 3",
                self.height, self.width, self.channels
            )));
        }
        if self.offset.len() != self.channels || self.scale.len() != self.channels {
            return Err(Error::Config("patch offset/scale length must equal channels".into()));
        }
        if self.scale.iter().any(|s| *s == 0.0 || !s.is_finite())
            || self.offset.iter().any(|o| !o.is_finite())
        {
            return Err(Error::Config("patch scale must be finite and non-zero".into()));
        }
        if !(self.context >= 0.0 && self.context.is_finite()) {
            return Err(Error::Config(format!("patch context {} must be >= 0", self.context)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Frame region actually sampled for `b`, including context.
    pub fn crop_region(&self, b: &BoundingBox) -> (f64, f64, f64, f64) {
        let (mx, my) = (self.context * b.w, self.context * b.h);
        (b.x - mx, b.y - my, b.w + 2.0 * mx, b.h + 2.0 * my)
    }

    /// Row-major `height x width` mask of patch pixels whose centers fall
    /// inside the box itself rather than its context margin.
    pub fn box_mask(&self) -> Vec<bool> {
        let total = 1.0 + 2.0 * self.context;
        let lo = self.context / total;
        let hi = (1.0 + self.context) / total;
        let inside = |i: usize, n: usize| {
            let t = (i as f64 + 0.5) / n as f64;
            t >= lo && t < hi
        };
        (0..self.height)
            .flat_map(|i| (0..self.width).map(move |j| (i, j)))
            .map(|(i, j)| inside(i, self.height) && inside(j, self.width))
            .collect()
    }

    pub fn denormalize(&self, value: f64, c: usize) -> f64 {
        value / self.scale[c] + self.offset[c]
    }
}

fn check_box(b: &BoundingBox) -> Result<()> {
    if !(b.w > 0.0 && b.h > 0.0) || !b.x.is_finite() || !b.y.is_finite() {
        return Err(Error::DegenerateBox { w: b.w, h: b.h });
    }
    Ok(())
}

fn fill_patch<T: Copy>(
    frame: &Frame,
    b: &BoundingBox,
    spec: &PatchSpec,
    out: &mut [T],
    conv: impl Fn(f64) -> T,
) {
    let (cx, cy, cw, ch) = spec.crop_region(b);
    let (pw, ph, nc) = (spec.width, spec.height, spec.channels);
    let sx_step = cw / pw as f64;
    let sy_step = ch / ph as f64;
    let (fw, fh) = (frame.width as i64, frame.height as i64);
    let fetch = |x: i64, y: i64, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= fw || y >= fh {
            0.0
        } else {
            (frame.sample(x as usize, y as usize, c, nc) as f64 - spec.offset[c]) * spec.scale[c]
        }
    };
    for i in 0..ph {
        let sy = cy + (i as f64 + 0.5) * sy_step - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0 = y0 as i64;
        for j in 0..pw {
            let sx = cx + (j as f64 + 0.5) * sx_step - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0 = x0 as i64;
            for c in 0..nc {
                let mut v = (1.0 - fx) * (1.0 - fy) * fetch(x0, y0, c);
                if fx > 0.0 {
                    v += fx * (1.0 - fy) * fetch(x0 + 1, y0, c);
                }
                if fy > 0.0 {
                    v += (1.0 - fx) * fy * fetch(x0, y0 + 1, c);
                    if fx > 0.0 {
                        v += fx * fy * fetch(x0 + 1, y0 + 1, c);
                    }
                }
                out[(i * pw + j) * nc + c] = conv(v);
            }
        }
    }
}

/// Crops `b` (plus context) from `frame`, zero-padding outside the frame,
/// bilinearly resamples to the patch size and normalizes. Shape `[H, W, C]`.
pub fn extract_patch(frame: &Frame, b: &BoundingBox, spec: &PatchSpec) -> Result<Tensor> {
    check_box(b)?;
    let mut out = vec![0.0; spec.len()];
    fill_patch(frame, b, spec, &mut out, |v| v);
    Tensor::new(vec![spec.height, spec.width, spec.channels], out)
}

/// Batched [`extract_patch`], shape `[B, H, W, C]`.
pub fn extract_patches(frame: &Frame, boxes: &[BoundingBox], spec: &PatchSpec) -> Result<Tensor> {
    let n = spec.len();
    let mut out = vec![0.0; n * boxes.len()];
    for (b, dst) in boxes.iter().zip(out.chunks_mut(n)) {
        check_box(b)?;
        fill_patch(frame, b, spec, dst, |v| v);
    }
    Tensor::new(vec![boxes.len(), spec.height, spec.width, spec.channels], out)
}

/// Single-precision patch used for sample storage.
pub fn extract_patch_f32(frame: &Frame, b: &BoundingBox, spec: &PatchSpec) -> Result<Vec<f32>> {
    check_box(b)?;
    let mut out = vec![0.0f32; spec.len()];
    fill_patch(frame, b, spec, &mut out, |v| v as f32);
    Ok(out)
}
