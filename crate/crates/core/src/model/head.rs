use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{Graph, NodeId, Parameter, Tensor};
use crate::error::{Error, Result};

/// One fully-connected layer, `y = x * weight + bias` with `weight: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
}

/// Trainable fully-connected classifier with relu between layers. The last
/// layer emits two logits: column 0 is background, column 1 is target.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    layers: Vec<Dense>,
}

/// Graph handles of a head's parameters, in [`ClassifierHead::params`] order.
#[derive(Clone, Debug)]
pub struct BoundHead {
    pub params: Vec<NodeId>,
}

impl ClassifierHead {
    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        Self::init_with_gain(widths, seed, 1.0)
    }

    /// As [`ClassifierHead::init`] with standard deviation `gain/sqrt(fan_in)`.
    /// A gain of 0 gives an all-zero head.
    pub fn init_with_gain(widths: &[usize], seed: u64, gain: f64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "head widths {widths:?}: need input width plus at least one positive layer width"
            )));
        }
        if *widths.last().unwrap() != 2 {
            return Err(Error::Config(format!(
                "head widths {widths:?}: final width must be 2 (background, target)"
            )));
        }
        if !(gain >= 0.0 && gain.is_finite()) {
            return Err(Error::Config(format!("head init gain {gain} must be >= 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let std = gain / (fan_in as f64).sqrt();
                let data = if std > 0.0 {
                    let normal = Normal::new(0.0, std).unwrap();
                    (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect()
                } else {
                    vec![0.0; fan_in * fan_out]
                };
                Dense {
                    weight: Parameter::new(Tensor::from_parts(vec![fan_in, fan_out], data), true),
                    bias: Parameter::new(Tensor::zeros(vec![fan_out]), true),
                }
            })
            .collect();
        Ok(ClassifierHead { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let mut prev: Option<usize> = None;
        for l in &layers {
            let (i, o) = match *l.weight.value.shape() {
                [i, o] => (i, o),
                ref s => return Err(Error::Config(format!("dense weight shape {s:?}"))),
            };
            if l.bias.value.shape() != [o] || prev.is_some_and(|p| p != i) {
                return Err(Error::Config("dense layer shapes do not chain".into()));
            }
            prev = Some(o);
        }
        if prev != Some(2) {
            return Err(Error::Config("head must end in 2 outputs".into()));
        }
        Ok(ClassifierHead { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].weight.value.shape()[0]
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_len())
            .chain(self.layers.iter().map(|l| l.bias.value.len()))
            .collect()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundHead {
        BoundHead {
            params: self.params().into_iter().map(|p| g.leaf(p.value.clone())).collect(),
        }
    }

    /// `[B, F]` features to `[B, 2]` logits.
    pub fn logits(&self, g: &mut Graph, bound: &BoundHead, features: NodeId) -> Result<NodeId> {
        let mut x = features;
        for (i, pair) in bound.params.chunks(2).enumerate() {
            x = g.affine(x, pair[0], pair[1])?;
            if i + 1 < self.layers.len() {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Adds `grads` (in [`ClassifierHead::params`] order) to the accumulated gradients.
    pub fn accumulate(&mut self, grads: &[Tensor]) {
        for (p, g) in self.params_mut().into_iter().zip(grads) {
            p.accumulate(g);
        }
    }
}
