use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::patch::PatchSpec;
use crate::diff::{Graph, NodeId, Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorMode {
    /// Raw normalized pixels are the features.
    Flatten,
    /// Fixed random conv + relu stack.
    Randconv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureExtractorSpec {
    pub mode: ExtractorMode,
    pub layers: Vec<ConvLayerSpec>,
    pub seed: u64,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        let l = |out_channels, kernel| ConvLayerSpec {
            out_channels,
            kernel,
            stride: 2,
        };
        FeatureExtractorSpec {
            mode: ExtractorMode::Flatten,
            layers: vec![l(8, 5), l(16, 3), l(32, 3)],
            seed: 0,
        }
    }
}

/// Frozen feature extractor. Its weights are generated once from the seed and
/// are never trainable, but gradients still flow through it to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    spec: FeatureExtractorSpec,
    input: (usize, usize, usize),
    weights: Vec<Parameter>,
    out_len: usize,
}

impl FeatureExtractor {
    pub fn new(spec: FeatureExtractorSpec, patch: &PatchSpec) -> Result<Self> {
        patch.validate()?;
        let input = (patch.height, patch.width, patch.channels);
        let mut weights = Vec::new();
        let out_len = match spec.mode {
            ExtractorMode::Flatten => patch.len(),
            ExtractorMode::Randconv => {
                if spec.layers.is_empty() {
                    return Err(Error::Config("randconv needs at least one layer".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let (mut h, mut w, mut c) = input;
                for (i, l) in spec.layers.iter().enumerate() {
                    if l.kernel == 0 || l.stride == 0 || l.out_channels == 0 || l.kernel > h.min(w)
                    {
                        return Err(Error::Config(format!(
                            "conv layer {i} ({}x{} k{} s{}) does not fit a {h}x{w} input",
                            l.out_channels, l.kernel, l.kernel, l.stride
                        )));
                    }
                    let fan_in = l.kernel * l.kernel * c;
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                    let n = l.out_channels * fan_in;
                    let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                    let t = Tensor::new(vec![l.out_channels, l.kernel, l.kernel, c], data)?;
                    weights.push(Parameter::new(t, false));
                    h = (h - l.kernel) / l.stride + 1;
                    w = (w - l.kernel) / l.stride + 1;
                    c = l.out_channels;
                }
                h * w * c
            }
        };
        Ok(FeatureExtractor {
            spec,
            input,
            weights,
            out_len,
        })
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn output_len(&self) -> usize {
        self.out_len
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn weights(&self) -> &[Parameter] {
        &self.weights
    }

    /// Records the extractor on `g`: `[B, H, W, C]` input to `[B, F]` features.
    pub fn features(&self, g: &mut Graph, input: NodeId) -> Result<NodeId> {
        let shape = g.shape(input).to_vec();
        let (h, w, c) = self.input;
        if shape.len() != 4 || shape[1..] != [h, w, c] {
            return Err(Error::Shape {
                op: "features",
                lhs: shape,
                rhs: vec![h, w, c],
            });
        }
        let batch = shape[0];
        let mut x = input;
        for (l, p) in self.spec.layers.iter().zip(&self.weights) {
            let wn = g.leaf(p.value.clone());
            x = g.conv2d(x, wn, l.stride)?;
            x = g.relu(x)?;
        }
        g.reshape(x, vec![batch, self.out_len])
    }
}
