//! Box arithmetic, proposal sampling, IoU labeling and bounding-box regression.

mod bbox;
mod regress;
mod sampler;

pub use bbox::BoundingBox;
pub use regress::{bbr_decode, bbr_targets, BBoxRegressor};
pub use sampler::{sample_proposals, FrameBounds, SamplerConfig};

use crate::error::{Error, Result};

/// Boxes split by IoU against a reference box.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledBoxes {
    pub positives: Vec<BoundingBox>,
    pub negatives: Vec<BoundingBox>,
}

/// Positive when IoU with `truth` exceeds `pos_thresh`, negative when it is at
/// most `neg_thresh`, discarded in between. With equal thresholds every box
/// lands in exactly one class.
pub fn label_samples(
    boxes: &[BoundingBox],
    truth: &BoundingBox,
    pos_thresh: f64,
    neg_thresh: f64,
) -> Result<LabeledBoxes> {
    if !(0.0..=1.0).contains(&neg_thresh)
        || !(0.0..=1.0).contains(&pos_thresh)
        || neg_thresh > pos_thresh
    {
        return Err(Error::Config(format!(
            "label thresholds need 0 <= neg ({neg_thresh}) <= pos ({pos_thresh}) <= 1"
        )));
    }
    let mut out = LabeledBoxes::default();
    for b in boxes {
        let iou = b.iou(truth);
        if iou > pos_thresh {
            out.positives.push(*b);
        } else if iou <= neg_thresh {
            out.negatives.push(*b);
        }
    }
    Ok(out)
}
