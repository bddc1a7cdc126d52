//! Attention-regularized classification loss and a single training iteration.
//!
//! Every sample contributes softmax cross-entropy plus a penalty on the shape
//! of its two attention maps: a positive sample should attend evenly and
//! strongly for the target class and sparsely for the background class, and a
//! negative sample the other way round. The penalty is built from input
//! gradients, so its parameter gradient needs a second backward pass.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, NodeId, Sgd, Tensor};
use crate::error::{Error, Result};
use crate::model::{attention_graph, AttentionPair, BoundHead, ClassifierHead, FeatureExtractor};
use crate::model::{NEGATIVE, POSITIVE};

/// Per-batch loss components. `total == ce + lambda * reg`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub iterations: usize,
    pub batch_pos: usize,
    pub batch_neg: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 5.0,
            lr: 2e-4,
            iterations: 50,
            batch_pos: 32,
            batch_neg: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `lr == 0` is accepted so that a run can be frozen without changing
    /// any other code path.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and >= 0");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.batch_pos == 0 || self.batch_neg == 0 {
            return bad("batches need at least one positive and one negative");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must be in [0, 1) and weight_decay >= 0");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Result<Sgd> {
        Sgd::new(self.lr, self.momentum, self.weight_decay)
    }
}

/// A normalized patch with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub patch: Vec<f32>,
    pub label: usize,
}

/// Mean and population standard deviation of a map.
pub fn attn_stats(map: &[f64]) -> Result<(f64, f64)> {
    if map.is_empty() {
        return Err(Error::Config("attention map is empty".into()));
    }
    let n = map.len() as f64;
    if map.iter().all(|&v| v == map[0]) {
        return Ok((map[0], 0.0));
    }
    let mu = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// Shape penalty of one sample's attention pair.
pub fn attention_regularizer(label: usize, pair: &AttentionPair, eps: f64) -> Result<f64> {
    let (mp, sp) = attn_stats(&pair.positive)?;
    let (mn, sn) = attn_stats(&pair.negative)?;
    Ok(match label {
        POSITIVE => sp / (mp + eps) + mn / (sn + eps),
        NEGATIVE => mp / (sp + eps) + sn / (mn + eps),
        _ => return Err(Error::Config(format!("label {label} is not 0 or 1"))),
    })
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Single-sample loss from precomputed logits and attention maps.
pub fn total_loss(
    logits: &[f64],
    label: usize,
    pair: &AttentionPair,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    if logits.len() != 2 {
        return Err(Error::Shape {
            op: "total_loss",
            lhs: vec![logits.len()],
            rhs: vec![2],
        });
    }
    let reg = attention_regularizer(label, pair, cfg.eps)?;
    let ce = cross_entropy(logits, label);
    let total = if cfg.lambda == 0.0 { ce } else { ce + cfg.lambda * reg };
    Ok(LossBreakdown { ce, reg, total })
}

/// Loss nodes recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub logits: NodeId,
    pub ce: NodeId,
    pub reg: NodeId,
    pub total: NodeId,
}

/// Records the batch-mean loss for a `[B, H, W, C]` input node.
pub fn loss_graph(
    g: &mut Graph,
    fx: &FeatureExtractor,
    head: &ClassifierHead,
    bound: &BoundHead,
    input: NodeId,
    labels: &[usize],
    lambda: f64,
    eps: f64,
) -> Result<LossNodes> {
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Config("labels must be 0 or 1".into()));
    }
    let attn = attention_graph(g, fx, head, bound, input)?;
    let ce_rows = g.softmax_ce(attn.logits, labels)?;
    let ce = g.mean_all(ce_rows)?;

    let mp = g.mean_rows(attn.positive)?;
    let sp = g.std_rows(attn.positive)?;
    let mn = g.mean_rows(attn.negative)?;
    let sn = g.std_rows(attn.negative)?;
    let r1a = g.div_eps(sp, mp, eps)?;
    let r1b = g.div_eps(mn, sn, eps)?;
    let r1 = g.add(r1a, r1b)?;
    let r0a = g.div_eps(mp, sp, eps)?;
    let r0b = g.div_eps(sn, mn, eps)?;
    let r0 = g.add(r0a, r0b)?;
    let is_pos = g.leaf(Tensor::from_vec(labels.iter().map(|&l| l as f64).collect()));
    let is_neg = g.leaf(Tensor::from_vec(labels.iter().map(|&l| 1.0 - l as f64).collect()));
    let pos_part = g.mul(is_pos, r1)?;
    let neg_part = g.mul(is_neg, r0)?;
    let rows = g.add(pos_part, neg_part)?;
    let reg = g.mean_all(rows)?;

    let total = if lambda == 0.0 {
        ce
    } else {
        let weighted = g.scale(reg, lambda)?;
        g.add(ce, weighted)?
    };
    Ok(LossNodes {
        logits: attn.logits,
        ce,
        reg,
        total,
    })
}

/// One forward pass, attention extraction with a differentiable backward
/// pass, loss assembly, one backward pass to the head and one optimizer step.
/// Returns the loss measured before the step. On a non-finite loss the head
/// is left untouched.
pub fn train_step(
    head: &mut ClassifierHead,
    fx: &FeatureExtractor,
    patches: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    opt: &mut Sgd,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let x = g.leaf(patches.clone());
    let bound = head.bind(&mut g);
    let nodes = loss_graph(&mut g, fx, head, &bound, x, labels, cfg.lambda, cfg.eps)?;
    let out = LossBreakdown {
        ce: g.value(nodes.ce).item(),
        reg: g.value(nodes.reg).item(),
        total: g.value(nodes.total).item(),
    };
    if ![out.ce, out.reg, out.total].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "training loss ce={} reg={} total={}",
            out.ce, out.reg, out.total
        )));
    }
    let grads = g.grad(nodes.total, &bound.params)?;
    head.accumulate(&grads);
    opt.step(&mut head.params_mut())?;
    Ok(out)
}

/// Stacks sample patches into a `[B, H, W, C]` tensor.
pub fn stack_patches(fx: &FeatureExtractor, batch: &[&LabeledSample]) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = fx.input_shape();
    let per = h * w * c;
    let mut data = Vec::with_capacity(batch.len() * per);
    for s in batch {
        if s.patch.len() != per {
            return Err(Error::Shape {
                op: "stack_patches",
                lhs: vec![s.patch.len()],
                rhs: vec![h, w, c],
            });
        }
        data.extend(s.patch.iter().map(|&v| v as f64));
    }
    let t = Tensor::new(vec![batch.len(), h, w, c], data)?;
    Ok((t, batch.iter().map(|s| s.label).collect()))
}

/// [`train_step`] on a batch holding exactly `cfg.batch_pos` positives and
/// `cfg.batch_neg` negatives.
pub fn train_iteration(
    head: &mut ClassifierHead,
    fx: &FeatureExtractor,
    batch: &[&LabeledSample],
    cfg: &TrainConfig,
    opt: &mut Sgd,
) -> Result<LossBreakdown> {
    let pos = batch.iter().filter(|s| s.label == POSITIVE).count();
    let neg = batch.iter().filter(|s| s.label == NEGATIVE).count();
    if pos != cfg.batch_pos || neg != cfg.batch_neg || pos + neg != batch.len() {
        return Err(Error::InsufficientSamples {
            pos,
            neg,
            need: cfg.batch_pos.max(cfg.batch_neg),
        });
    }
    let (patches, labels) = stack_patches(fx, batch)?;
    train_step(head, fx, &patches, &labels, cfg, opt)
}

/// Indices of one mini-batch: `n_pos` distinct draws from `0..pos_len` and
/// `n_neg` distinct draws from `0..neg_len`.
pub fn draw_batch<R: Rng + ?Sized>(
    pos_len: usize,
    neg_len: usize,
    n_pos: usize,
    n_neg: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if pos_len < n_pos || neg_len < n_neg {
        return Err(Error::InsufficientSamples {
            pos: pos_len,
            neg: neg_len,
            need: n_pos.max(n_neg),
        });
    }
    let p = index::sample(rng, pos_len, n_pos).into_vec();
    let n = index::sample(rng, neg_len, n_neg).into_vec();
    Ok((p, n))
}
