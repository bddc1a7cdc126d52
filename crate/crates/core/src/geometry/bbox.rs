use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box, top-left origin, 0-based pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::DegenerateBox { w, h })
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        let inter = iw * ih;
        if inter <= 0.0 {
            return 0.0;
        }
        // areas from the same corner differences as the intersection, so a
        // box overlaps itself with IoU exactly 1
        let extent = |b: &BoundingBox| (b.right() - b.x) * (b.bottom() - b.y);
        (inter / (extent(self) + extent(other) - inter)).clamp(0.0, 1.0)
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        let (dx, dy) = (ax - bx, ay - by);
        // exact at integer distances, unlike hypot
        (dx * dx + dy * dy).sqrt()
    }

    /// Whether the box lies entirely within a `width x height` frame.
    pub fn inside(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height
    }

    /// `x,y,w,h` with a 1-based origin, as stored on disk.
    pub fn to_line(&self) -> String {
        format!("{},{},{},{}", self.x + 1.0, self.y + 1.0, self.w, self.h)
    }

    /// Parses a 1-based `x,y,w,h` line; commas, tabs or spaces separate fields.
    pub fn parse_line(line: &str) -> Option<BoundingBox> {
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .ok()?;
        match vals[..] {
            [x, y, w, h] => BoundingBox::new(x - 1.0, y - 1.0, w, h).ok(),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&bx(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((a.iou(&bx(1.0, 1.0, 2.0, 2.0)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(bx(0.0, 0.0, 2.0, 2.0).iou(&bx(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn center_roundtrip() {
        let a = bx(3.5, -2.0, 7.0, 5.0);
        let (cx, cy) = a.center();
        assert_eq!(BoundingBox::from_center(cx, cy, a.w, a.h).unwrap(), a);
    }

    #[test]
    fn line_format_is_one_based() {
        let a = bx(0.0, 9.0, 10.0, 20.5);
        assert_eq!(a.to_line(), "1,10,10,20.5");
        assert_eq!(BoundingBox::parse_line("1,10,10,20.5"), Some(a));
        assert_eq!(BoundingBox::parse_line("1\t10\t10\t20.5"), Some(a));
        assert_eq!(BoundingBox::parse_line("1,10,0,20"), None);
        assert_eq!(BoundingBox::parse_line("1,10,3"), None);
    }

    #[test]
    fn invalid_extent_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, -1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 0.0).is_err());
    }
}
