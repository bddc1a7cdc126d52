//! The tracking-by-detection network: a frozen feature extractor followed by a
//! trainable two-class head, plus input-gradient attention maps.

mod extractor;
mod head;
mod patch;

pub use extractor::{ConvLayerSpec, ExtractorMode, FeatureExtractor, FeatureExtractorSpec};
pub use head::{BoundHead, ClassifierHead, Dense};
pub use patch::{extract_patch, extract_patch_f32, extract_patches, Frame, PatchSpec};

use crate::diff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

/// Positive and negative attention maps of one sample, each `height x width`
/// and entrywise non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPair {
    pub height: usize,
    pub width: usize,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Graph handles produced by [`attention_graph`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionNodes {
    /// `[B, 2]`
    pub logits: NodeId,
    /// `[B, H*W]`
    pub positive: NodeId,
    /// `[B, H*W]`
    pub negative: NodeId,
}

fn as_batch(fx: &FeatureExtractor, patches: &Tensor) -> Result<Tensor> {
    let (h, w, c) = fx.input_shape();
    match *patches.shape() {
        [ph, pw, pc] if (ph, pw, pc) == (h, w, c) => patches.reshape(vec![1, h, w, c]),
        [_, ph, pw, pc] if (ph, pw, pc) == (h, w, c) => Ok(patches.clone()),
        _ => Err(Error::Shape {
            op: "forward",
            lhs: patches.shape().to_vec(),
            rhs: vec![h, w, c],
        }),
    }
}

/// Pre-softmax scores `[B, 2]` for a patch `[H, W, C]` or batch `[B, H, W, C]`.
pub fn forward(head: &ClassifierHead, fx: &FeatureExtractor, patches: &Tensor) -> Result<Tensor> {
    let batch = as_batch(fx, patches)?;
    let mut g = Graph::without_retention();
    let x = g.leaf(batch);
    let bound = head.bind(&mut g);
    let feats = fx.features(&mut g, x)?;
    let logits = head.logits(&mut g, &bound, feats)?;
    Ok(g.value(logits).clone())
}

/// Frozen-extractor features `[B, F]` for a patch or batch.
pub fn extract_features(fx: &FeatureExtractor, patches: &Tensor) -> Result<Tensor> {
    let batch = as_batch(fx, patches)?;
    let mut g = Graph::without_retention();
    let x = g.leaf(batch);
    let feats = fx.features(&mut g, x)?;
    Ok(g.value(feats).clone())
}

/// Attention of class `class`: relu of the input gradient of its logit, with
/// channels collapsed by their mean. Returns a `[B, H*W]` node.
fn class_attention(
    g: &mut Graph,
    input: NodeId,
    logits: NodeId,
    class: usize,
) -> Result<NodeId> {
    let shape = g.shape(input).to_vec();
    let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let score = g.slice_cols(logits, class, 1)?;
    // samples are independent, so d(sum_b f_c(I_b))/dI_b = df_c(I_b)/dI_b
    let score = g.sum_all(score)?;
    let grad = g.grad_graph(score, &[input])?[0];
    let pos = g.relu(grad)?;
    let per_channel = g.reshape(pos, vec![b * h * w, c])?;
    let collapsed = g.mean_rows(per_channel)?;
    g.reshape(collapsed, vec![b, h * w])
}

/// Records forward pass and both attention maps on `g` so that a loss built
/// from them can be differentiated with respect to the head parameters.
/// `input` must be a `[B, H, W, C]` node.
pub fn attention_graph(
    g: &mut Graph,
    fx: &FeatureExtractor,
    head: &ClassifierHead,
    bound: &BoundHead,
    input: NodeId,
) -> Result<AttentionNodes> {
    let feats = fx.features(g, input)?;
    let logits = head.logits(g, bound, feats)?;
    let positive = class_attention(g, input, logits, POSITIVE)?;
    let negative = class_attention(g, input, logits, NEGATIVE)?;
    Ok(AttentionNodes {
        logits,
        positive,
        negative,
    })
}

/// Attention maps for a patch or batch. Parameters are only read.
pub fn attention_maps(
    head: &ClassifierHead,
    fx: &FeatureExtractor,
    patches: &Tensor,
) -> Result<Vec<AttentionPair>> {
    let batch = as_batch(fx, patches)?;
    let (h, w, _) = fx.input_shape();
    let mut g = Graph::new();
    let x = g.leaf(batch);
    let bound = head.bind(&mut g);
    let nodes = attention_graph(&mut g, fx, head, &bound, x)?;
    let n = h * w;
    let pos = g.value(nodes.positive).data();
    let neg = g.value(nodes.negative).data();
    Ok(pos
        .chunks(n)
        .zip(neg.chunks(n))
        .map(|(p, q)| AttentionPair {
            height: h,
            width: w,
            positive: p.to_vec(),
            negative: q.to_vec(),
        })
        .collect())
}

/// Softmax probability of the target class for each row of `[B, 2]` logits.
pub fn positive_probability(logits: &Tensor) -> Vec<f64> {
    logits
        .data()
        .chunks(2)
        .map(|r| 1.0 / (1.0 + (r[NEGATIVE] - r[POSITIVE]).exp()))
        .collect()
}
