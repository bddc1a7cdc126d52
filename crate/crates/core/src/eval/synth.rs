//! Deterministic synthetic sequences: a textured target moving over a
//! textured background, with optional appearance drift, a sliding occluder
//! and a look-alike distractor.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{Sequence, SequenceRecord};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::Frame;

/// Occluder pass over the target. Frame indices are 0-based and inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderConfig {
    pub start: usize,
    pub end: usize,
    /// Occluder width as a fraction of the target width.
    pub coverage: f64,
    pub seed: u64,
}

/// A copy of the target's initial appearance on its own linear path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorConfig {
    pub start_x: f64,
    pub start_y: f64,
    pub velocity_x: f64,
    pub velocity_y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub target_w: f64,
    pub target_h: f64,
    /// Target center on frame 0.
    pub start_x: f64,
    pub start_y: f64,
    /// Linear motion in pixels per frame.
    pub velocity_x: f64,
    pub velocity_y: f64,
    /// Sinusoidal jitter amplitudes in pixels, and its period in frames.
    pub jitter_x: f64,
    pub jitter_y: f64,
    pub jitter_period: f64,
    /// Per-frame blend rate from the initial to a second target texture.
    pub drift: f64,
    pub target_seed: u64,
    pub background_seed: u64,
    pub occluder: Option<OccluderConfig>,
    pub distractor: Option<DistractorConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synthetic".into(),
            width: 128,
            height: 96,
            frames: 50,
            target_w: 24.0,
            target_h: 20.0,
            start_x: 40.0,
            start_y: 48.0,
            velocity_x: 0.8,
            velocity_y: 0.0,
            jitter_x: 2.0,
            jitter_y: 3.0,
            jitter_period: 16.0,
            drift: 0.01,
            target_seed: 1,
            background_seed: 2,
            occluder: None,
            distractor: None,
        }
    }
}

impl SynthConfig {
    /// Target box on frame `t`.
    pub fn target_box(&self, t: usize) -> BoundingBox {
        let tf = t as f64;
        let phase = 2.0 * PI * tf / self.jitter_period;
        let cx = self.start_x + self.velocity_x * tf + self.jitter_x * phase.sin();
        let cy = self.start_y + self.velocity_y * tf + self.jitter_y * phase.cos();
        BoundingBox {
            x: cx - self.target_w / 2.0,
            y: cy - self.target_h / 2.0,
            w: self.target_w,
            h: self.target_h,
        }
    }

    fn distractor_box(&self, t: usize) -> Option<BoundingBox> {
        self.distractor.as_ref().map(|d| BoundingBox {
            x: d.start_x + d.velocity_x * t as f64 - self.target_w / 2.0,
            y: d.start_y + d.velocity_y * t as f64 - self.target_h / 2.0,
            w: self.target_w,
            h: self.target_h,
        })
    }

    fn occluder_box(&self, t: usize) -> Option<BoundingBox> {
        let o = self.occluder.as_ref()?;
        if t < o.start || t > o.end {
            return None;
        }
        let target = self.target_box(t);
        let progress = if o.end > o.start {
            (t - o.start) as f64 / (o.end - o.start) as f64
        } else {
            0.5
        };
        let w = o.coverage * target.w;
        let margin = 0.1 * target.h;
        Some(BoundingBox {
            x: target.x + (target.w - w) * progress,
            y: target.y - margin,
            w,
            h: target.h + 2.0 * margin,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth {}: {m}", self.name)));
        if self.width < 8 || self.height < 8 || self.frames < 2 {
            return bad("frames must be at least 8x8 and the sequence at least 2 long".into());
        }
        if !(self.target_w >= 4.0 && self.target_h >= 4.0) {
            return bad("target must be at least 4x4 pixels".into());
        }
        if !(self.jitter_period > 0.0) || !(0.0..=1.0).contains(&self.drift) {
            return bad("jitter_period must be > 0 and drift in [0, 1]".into());
        }
        if let Some(o) = &self.occluder {
            if o.start > o.end || !(o.coverage > 0.0 && o.coverage <= 1.0) {
                return bad("occluder needs start <= end and coverage in (0, 1]".into());
            }
        }
        for t in 0..self.frames {
            let b = self.target_box(t);
            if !b.is_valid() || !b.inside(self.width as f64, self.height as f64) {
                return bad(format!("target leaves the frame at frame {t}: {}", b.to_line()));
            }
        }
        Ok(())
    }
}

/// Random block texture sampled at unit coordinates.
struct BlockTexture {
    cols: usize,
    rows: usize,
    colors: Vec<[f32; 3]>,
}

impl BlockTexture {
    fn new(cols: usize, rows: usize, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Self {
        let colors = (0..cols * rows)
            .map(|_| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)])
            .collect();
        BlockTexture { cols, rows, colors }
    }

    fn at(&self, u: f64, v: f64) -> [f32; 3] {
        let i = ((v * self.rows as f64) as usize).min(self.rows - 1);
        let j = ((u * self.cols as f64) as usize).min(self.cols - 1);
        self.colors[i * self.cols + j]
    }
}

/// Smooth value noise plus per-pixel grain.
fn background(cfg: &SynthConfig) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.background_seed);
    let cell = 16.0;
    let gw = (cfg.width as f64 / cell).ceil() as usize + 2;
    let gh = (cfg.height as f64 / cell).ceil() as usize + 2;
    let grid: Vec<[f32; 3]> = (0..gw * gh)
        .map(|_| [rng.random_range(50.0..200.0), rng.random_range(50.0..200.0), rng.random_range(50.0..200.0)])
        .collect();
    let mut out = vec![0.0f32; cfg.width * cfg.height * 3];
    for y in 0..cfg.height {
        let gy = y as f64 / cell;
        let (iy, fy) = (gy.floor() as usize, (gy - gy.floor()) as f32);
        for x in 0..cfg.width {
            let gx = x as f64 / cell;
            let (ix, fx) = (gx.floor() as usize, (gx - gx.floor()) as f32);
            let at = |i: usize, j: usize| grid[i * gw + j];
            let (a, b, c, d) = (at(iy, ix), at(iy, ix + 1), at(iy + 1, ix), at(iy + 1, ix + 1));
            for ch in 0..3 {
                let top = a[ch] * (1.0 - fx) + b[ch] * fx;
                let bottom = c[ch] * (1.0 - fx) + d[ch] * fx;
                let grain: f32 = rng.random_range(-12.0..12.0);
                out[(y * cfg.width + x) * 3 + ch] = top * (1.0 - fy) + bottom * fy + grain;
            }
        }
    }
    out
}

fn covers(b: &BoundingBox, x: usize, y: usize) -> Option<(f64, f64)> {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    if px >= b.x && px < b.right() && py >= b.y && py < b.bottom() {
        Some(((px - b.x) / b.w, (py - b.y) / b.h))
    } else {
        None
    }
}

/// Renders the sequence in memory. Pixel values are integral, so saving and
/// reloading reproduces the frames exactly.
pub fn render_sequence(cfg: &SynthConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.target_seed);
    let first = BlockTexture::new(6, 5, 0.0, 255.0, &mut rng);
    let second = BlockTexture::new(6, 5, 0.0, 255.0, &mut rng);
    let occ_tex = cfg.occluder.as_ref().map(|o| {
        let mut r = ChaCha8Rng::seed_from_u64(o.seed);
        BlockTexture::new(3, 8, 90.0, 140.0, &mut r)
    });
    let bg = background(cfg);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut truth = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let target = cfg.target_box(t);
        let distractor = cfg.distractor_box(t);
        let occluder = cfg.occluder_box(t);
        let alpha = (cfg.drift * t as f64).min(1.0) as f32;
        let mut data = bg.clone();
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let mut px: Option<[f32; 3]> = None;
                if let Some((u, v)) = distractor.as_ref().and_then(|d| covers(d, x, y)) {
                    px = Some(first.at(u, v));
                }
                if let Some((u, v)) = covers(&target, x, y) {
                    let (a, b) = (first.at(u, v), second.at(u, v));
                    px = Some([0, 1, 2].map(|c| a[c] * (1.0 - alpha) + b[c] * alpha));
                }
                if let (Some(o), Some(tex)) = (occluder.as_ref(), occ_tex.as_ref()) {
                    if let Some((u, v)) = covers(o, x, y) {
                        px = Some(tex.at(u, v));
                    }
                }
                if let Some(p) = px {
                    data[(y * cfg.width + x) * 3..][..3].copy_from_slice(&p);
                }
            }
        }
        for v in &mut data {
            *v = v.round().clamp(0.0, 255.0);
        }
        frames.push(Frame::new(cfg.width, cfg.height, 3, data)?);
        truth.push(target);
    }
    Ok(Sequence {
        name: cfg.name.clone(),
        frames,
        truth,
    })
}

/// Renders and writes the sequence under `dir`.
pub fn generate_sequence(cfg: &SynthConfig, dir: &Path) -> Result<SequenceRecord> {
    render_sequence(cfg)?.save(dir)
}

/// Eight sequences, each with appearance drift, an occluder pass and a
/// look-alike distractor crossing the scene.
pub fn occlusion_suite() -> Vec<SynthConfig> {
    (0..8u64)
        .map(|i| {
            let fi = i as f64;
            let dir = if i % 2 == 0 { 1.0 } else { -1.0 };
            let start_x = if dir > 0.0 { 36.0 } else { 92.0 };
            SynthConfig {
                name: format!("occl{:02}", i + 1),
                velocity_x: dir * (0.5 + 0.1 * fi),
                velocity_y: 0.15 * (fi - 3.5) / 3.5,
                start_x,
                start_y: 48.0 - 6.0 * (fi - 3.5) / 3.5,
                jitter_x: 1.5 + 0.25 * fi,
                jitter_y: 2.5,
                jitter_period: 14.0 + 2.0 * fi,
                drift: 0.008 + 0.002 * fi,
                target_seed: 100 + i,
                background_seed: 200 + i,
                occluder: Some(OccluderConfig {
                    start: 18 + (i as usize % 3) * 4,
                    end: 24 + (i as usize % 3) * 4,
                    coverage: 0.5 + 0.05 * fi,
                    seed: 300 + i,
                }),
                distractor: Some(DistractorConfig {
                    start_x: if dir > 0.0 { 112.0 } else { 14.0 },
                    start_y: if i % 4 < 2 { 18.0 } else { 78.0 },
                    velocity_x: -dir * 0.6,
                    velocity_y: 0.0,
                }),
                ..SynthConfig::default()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_and_truth_counts() {
        let dir = tempfile::tempdir().unwrap();
        let rec = generate_sequence(&SynthConfig::default(), dir.path()).unwrap();
        assert_eq!(rec.frames.len(), 50);
        let text = std::fs::read_to_string(dir.path().join("groundtruth_rect.txt")).unwrap();
        assert_eq!(text.lines().count(), 50);
        assert_eq!(rec.load().unwrap(), render_sequence(&SynthConfig::default()).unwrap());
    }

    #[test]
    fn static_target_has_constant_truth() {
        let cfg = SynthConfig {
            velocity_x: 0.0,
            jitter_x: 0.0,
            jitter_y: 0.0,
            drift: 0.0,
            frames: 6,
            ..Default::default()
        };
        let seq = render_sequence(&cfg).unwrap();
        assert!(seq.truth.iter().all(|b| *b == seq.truth[0]));
        assert!(seq.frames.iter().all(|f| *f == seq.frames[0]));
    }

    #[test]
    fn occluder_overwrites_target_only_when_scheduled() {
        let base = SynthConfig {
            frames: 30,
            ..Default::default()
        };
        let occluded = SynthConfig {
            occluder: Some(OccluderConfig {
                start: 20,
                end: 25,
                coverage: 0.5,
                seed: 7,
            }),
            ..base.clone()
        };
        let a = render_sequence(&base).unwrap();
        let b = render_sequence(&occluded).unwrap();
        for t in 0..30 {
            let tb = a.truth[t];
            let mut changed_inside = 0;
            for y in 0..base.height {
                for x in 0..base.width {
                    let i = (y * base.width + x) * 3;
                    if a.frames[t].data()[i..i + 3] != b.frames[t].data()[i..i + 3]
                        && covers(&tb, x, y).is_some()
                    {
                        changed_inside += 1;
                    }
                }
            }
            if (20..=25).contains(&t) {
                assert!(changed_inside as f64 >= 0.3 * tb.area(), "frame {t}: {changed_inside}");
            } else {
                assert_eq!(a.frames[t], b.frames[t], "frame {t}");
            }
        }
    }

    #[test]
    fn leaving_the_frame_is_rejected() {
        let cfg = SynthConfig {
            velocity_x: 5.0,
            ..Default::default()
        };
        let err = render_sequence(&cfg).unwrap_err().to_string();
        assert!(err.contains("leaves the frame"), "{err}");
    }

    #[test]
    fn suite_is_valid_and_deterministic() {
        let suite = occlusion_suite();
        assert_eq!(suite.len(), 8);
        for cfg in &suite {
            cfg.validate().unwrap();
            assert!(cfg.occluder.is_some() && cfg.distractor.is_some() && cfg.drift > 0.0);
        }
        assert_eq!(render_sequence(&suite[3]).unwrap(), render_sequence(&suite[3]).unwrap());
    }
}
