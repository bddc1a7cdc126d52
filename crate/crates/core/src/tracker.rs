//! Online tracking: first-frame training, per-frame detection over sampled
//! proposals, and short-term model updates on a fixed schedule.

use std::collections::VecDeque;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Sgd, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{
    bbr_targets, label_samples, sample_proposals, BBoxRegressor, BoundingBox, FrameBounds,
    SamplerConfig,
};
use crate::model::{
    attention_maps, extract_features, extract_patch, extract_patches, forward,
    positive_probability, AttentionPair, ClassifierHead, FeatureExtractor, FeatureExtractorSpec,
    Frame, PatchSpec, NEGATIVE, POSITIVE,
};
use crate::reciprocative::{draw_batch, train_iteration, train_step, LabeledSample, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// First-frame sample distribution; `count` is the number of initial samples.
    pub init_sampler: SamplerConfig,
    pub init_iterations: usize,
    pub init_lr: f64,
    /// Per-frame proposal distribution; `count` is the number of proposals.
    pub sampler: SamplerConfig,
    pub update_iterations: usize,
    /// Frames between model updates.
    pub update_interval: usize,
    pub update_lr: f64,
    /// Frames of labeled samples kept for updates.
    pub horizon: usize,
    pub batch_pos: usize,
    pub batch_neg: usize,
    pub lambda: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub hidden: Vec<usize>,
    /// Scale of the random head initialization; 0 yields an all-zero head.
    pub head_gain: f64,
    pub patch: PatchSpec,
    pub extractor: FeatureExtractorSpec,
    pub bbox_regression: bool,
    pub bbr_ridge: f64,
    pub bbr_samples: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            init_sampler: SamplerConfig {
                count: 5500,
                translation: 0.5,
                ..SamplerConfig::default()
            },
            init_iterations: 50,
            init_lr: 2e-4,
            sampler: SamplerConfig::default(),
            update_iterations: 15,
            update_interval: 10,
            update_lr: 3e-4,
            horizon: 10,
            batch_pos: 32,
            batch_neg: 32,
            lambda: 5.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            eps: 1e-8,
            pos_iou: 0.5,
            neg_iou: 0.5,
            hidden: vec![128, 64],
            head_gain: 1.0,
            patch: PatchSpec::default(),
            extractor: FeatureExtractorSpec::default(),
            bbox_regression: true,
            bbr_ridge: 10.0,
            bbr_samples: 500,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.init_sampler.validate()?;
        self.sampler.validate()?;
        self.patch.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.init_iterations == 0 || self.update_iterations == 0 || self.update_interval == 0 {
            return bad("iteration counts and update interval must be >= 1".into());
        }
        if self.horizon < self.update_interval {
            return bad(format!(
                "horizon {} must be >= update interval {}",
                self.horizon, self.update_interval
            ));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be >= 1".into());
        }
        if !(self.head_gain >= 0.0 && self.head_gain.is_finite()) {
            return bad("head_gain must be finite and >= 0".into());
        }
        if !(self.bbr_ridge > 0.0) || self.bbr_samples < 2 {
            return bad("bbr_ridge must be > 0 and bbr_samples >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.neg_iou)
            || !(0.0..=1.0).contains(&self.pos_iou)
            || self.neg_iou > self.pos_iou
        {
            return bad("label thresholds need 0 <= neg_iou <= pos_iou <= 1".into());
        }
        self.train_config(self.init_lr, self.init_iterations).validate()?;
        self.train_config(self.update_lr, self.update_iterations).validate()
    }

    pub fn train_config(&self, lr: f64, iterations: usize) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            lr,
            iterations,
            batch_pos: self.batch_pos,
            batch_neg: self.batch_neg,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            eps: self.eps,
            seed: self.seed,
        }
    }
}

/// Outcome of one tracked frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    /// Highest-scoring proposal.
    pub predicted: BoundingBox,
    /// Positive logit of `predicted`.
    pub score: f64,
    /// Positive-class probability of `predicted`.
    pub probability: f64,
    /// Box after regression, when it was applied.
    pub refined: Option<BoundingBox>,
    /// Scores of all proposals, kept only when requested.
    pub scores: Option<Vec<f64>>,
    /// Whether a model update ran after this frame.
    pub updated: bool,
}

impl FrameResult {
    /// The box to report: refined when available.
    pub fn output(&self) -> BoundingBox {
        self.refined.unwrap_or(self.predicted)
    }
}

/// Counts of protocol events, for auditing a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ProtocolCounters {
    pub init_samples: usize,
    pub init_positives: usize,
    pub init_negatives: usize,
    pub init_iterations: usize,
    /// `(positives, negatives)` of every training batch, init and update.
    pub batches: Vec<(usize, usize)>,
    pub proposals_per_frame: Vec<usize>,
    /// Frame counter values at which an update ran.
    pub update_frames: Vec<usize>,
    pub update_iterations: usize,
    /// Frame counter values at which an update was due but skipped.
    pub skipped_updates: Vec<usize>,
}

/// Full tracker state for one sequence.
#[derive(Clone, Debug)]
pub struct Tracker {
    cfg: TrackerConfig,
    fx: FeatureExtractor,
    head: ClassifierHead,
    bbr: BBoxRegressor,
    memory: VecDeque<Vec<LabeledSample>>,
    frame_count: usize,
    last_box: BoundingBox,
    sample_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    update_opt: Sgd,
    keep_scores: bool,
    counters: ProtocolCounters,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const SAMPLE_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

impl Tracker {
    /// Trains a fresh model on `truth` in `frame`.
    pub fn init(frame: &Frame, truth: &BoundingBox, cfg: TrackerConfig) -> Result<Tracker> {
        cfg.validate()?;
        let bounds = FrameBounds::new(frame.width(), frame.height());
        let inside = BoundingBox::new(0.0, 0.0, bounds.width, bounds.height)?;
        if !truth.is_valid() || truth.iou(&inside) <= 0.0 {
            return Err(Error::Config(format!(
                "initial box {} does not overlap the {}x{} frame",
                truth.to_line(),
                frame.width(),
                frame.height()
            )));
        }
        let fx = FeatureExtractor::new(cfg.extractor.clone(), &cfg.patch)?;
        let mut widths = vec![fx.output_len()];
        widths.extend(&cfg.hidden);
        widths.push(2);
        let mut init_rng = stream(cfg.seed, INIT_STREAM);
        let head = ClassifierHead::init_with_gain(&widths, init_rng.next_u64(), cfg.head_gain)?;
        let mut sample_rng = stream(cfg.seed, SAMPLE_STREAM);
        let mut batch_rng = stream(cfg.seed, BATCH_STREAM);

        let draws = sample_proposals(truth, &cfg.init_sampler, bounds, &mut sample_rng)?;
        let labeled = label_samples(&draws, truth, cfg.pos_iou, cfg.neg_iou)?;
        let (pos, neg) = (&labeled.positives, &labeled.negatives);
        if pos.len() < cfg.batch_pos || neg.len() < cfg.batch_neg {
            return Err(Error::InsufficientSamples {
                pos: pos.len(),
                neg: neg.len(),
                need: cfg.batch_pos.max(cfg.batch_neg),
            });
        }
        let mut counters = ProtocolCounters {
            init_samples: draws.len(),
            init_positives: pos.len(),
            init_negatives: neg.len(),
            ..Default::default()
        };

        let mut head = head;
        let train = cfg.train_config(cfg.init_lr, cfg.init_iterations);
        let mut opt = train.optimizer()?;
        let mut labels = vec![POSITIVE; cfg.batch_pos];
        labels.resize(cfg.batch_pos + cfg.batch_neg, NEGATIVE);
        for it in 0..cfg.init_iterations {
            let (pi, ni) = draw_batch(pos.len(), neg.len(), cfg.batch_pos, cfg.batch_neg, &mut batch_rng)?;
            let boxes: Vec<BoundingBox> =
                pi.iter().map(|&i| pos[i]).chain(ni.iter().map(|&i| neg[i])).collect();
            let patches = extract_patches(frame, &boxes, &cfg.patch)?;
            let loss = train_step(&mut head, &fx, &patches, &labels, &train, &mut opt)?;
            if it == 0 || it + 1 == cfg.init_iterations {
                log::debug!(
                    "init iteration {}: ce {:.4} reg {:.4} total {:.4}",
                    it + 1,
                    loss.ce,
                    loss.reg,
                    loss.total
                );
            }
            counters.init_iterations += 1;
            counters.batches.push((pi.len(), ni.len()));
        }

        let bbr = if cfg.bbox_regression {
            let chosen = &pos[..pos.len().min(cfg.bbr_samples)];
            let patches = extract_patches(frame, chosen, &cfg.patch)?;
            let feats = extract_features(&fx, &patches)?;
            let dim = fx.output_len();
            let rows: Vec<Vec<f64>> = feats.data().chunks(dim).map(<[f64]>::to_vec).collect();
            let targets: Vec<[f64; 4]> = chosen.iter().map(|p| bbr_targets(p, truth)).collect();
            BBoxRegressor::fit(&rows, &targets, cfg.bbr_ridge)?
        } else {
            BBoxRegressor::untrained(cfg.bbr_ridge)
        };

        let update_opt = cfg.train_config(cfg.update_lr, cfg.update_iterations).optimizer()?;
        Ok(Tracker {
            fx,
            head,
            bbr,
            memory: VecDeque::with_capacity(cfg.horizon + 1),
            frame_count: 0,
            last_box: *truth,
            sample_rng,
            batch_rng,
            update_opt,
            keep_scores: false,
            counters,
            cfg,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut ClassifierHead {
        &mut self.head
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.fx
    }

    pub fn regressor(&self) -> &BBoxRegressor {
        &self.bbr
    }

    pub fn counters(&self) -> &ProtocolCounters {
        &self.counters
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn last_box(&self) -> BoundingBox {
        self.last_box
    }

    pub fn memory_len(&self) -> usize {
        self.memory.iter().map(Vec::len).sum()
    }

    pub fn memory_frames(&self) -> usize {
        self.memory.len()
    }

    /// Keep per-proposal scores in every [`FrameResult`].
    pub fn retain_scores(&mut self, keep: bool) {
        self.keep_scores = keep;
    }

    /// Tracks one frame, scoring proposals with the network.
    pub fn track_frame(&mut self, frame: &Frame) -> Result<FrameResult> {
        let head = self.head.clone();
        let fx = self.fx.clone();
        self.track_frame_scored(frame, |_, patches| {
            let logits = forward(&head, &fx, patches)?;
            Ok(logits.data().chunks(2).map(|r| r[POSITIVE]).collect())
        })
    }

    /// Tracks one frame with a custom proposal scorer. The scorer receives
    /// the proposals and their `[N, H, W, C]` patches and returns one score
    /// per proposal.
    pub fn track_frame_scored<F>(&mut self, frame: &Frame, score: F) -> Result<FrameResult>
    where
        F: FnOnce(&[BoundingBox], &Tensor) -> Result<Vec<f64>>,
    {
        let bounds = FrameBounds::new(frame.width(), frame.height());
        let proposals = sample_proposals(&self.last_box, &self.cfg.sampler, bounds, &mut self.sample_rng)?;
        let patches = extract_patches(frame, &proposals, &self.cfg.patch)?;
        let scores = score(&proposals, &patches)?;
        if scores.len() != proposals.len() {
            return Err(Error::Shape {
                op: "track_frame",
                lhs: vec![scores.len()],
                rhs: vec![proposals.len()],
            });
        }
        if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score of proposal {bad}")));
        }
        let best = argmax(&scores);
        let predicted = proposals[best];
        let per = self.cfg.patch.len();
        let best_patch = Tensor::new(
            vec![self.cfg.patch.height, self.cfg.patch.width, self.cfg.patch.channels],
            patches.data()[best * per..(best + 1) * per].to_vec(),
        )?;
        let probability = positive_probability(&forward(&self.head, &self.fx, &best_patch)?)[0];
        let refined = if self.bbr.is_trained() && probability > 0.5 {
            let feat = extract_features(&self.fx, &best_patch)?;
            let b = self.bbr.apply(feat.data(), &predicted)?;
            Some(bounds.clamp(&b, self.cfg.sampler.min_size))
        } else {
            None
        };

        let samples: Vec<LabeledSample> = proposals
            .iter()
            .zip(patches.data().chunks(per))
            .filter_map(|(b, p)| {
                let iou = b.iou(&predicted);
                let label = if iou > self.cfg.pos_iou {
                    POSITIVE
                } else if iou <= self.cfg.neg_iou {
                    NEGATIVE
                } else {
                    return None;
                };
                Some(LabeledSample {
                    patch: p.iter().map(|&v| v as f32).collect(),
                    label,
                })
            })
            .collect();
        self.memory.push_back(samples);
        while self.memory.len() > self.cfg.horizon {
            self.memory.pop_front();
        }
        self.counters.proposals_per_frame.push(proposals.len());
        self.frame_count += 1;
        self.last_box = predicted;

        let updated = if self.frame_count % self.cfg.update_interval == 0 {
            self.update()?
        } else {
            false
        };
        Ok(FrameResult {
            predicted,
            score: scores[best],
            probability,
            refined,
            scores: self.keep_scores.then_some(scores),
            updated,
        })
    }

    /// Runs one scheduled update from sample memory. Returns `false` (and
    /// logs a warning) when memory lacks a full batch of either label.
    pub fn update(&mut self) -> Result<bool> {
        let pos: Vec<&LabeledSample> =
            self.memory.iter().flatten().filter(|s| s.label == POSITIVE).collect();
        let neg: Vec<&LabeledSample> =
            self.memory.iter().flatten().filter(|s| s.label == NEGATIVE).collect();
        if pos.len() < self.cfg.batch_pos || neg.len() < self.cfg.batch_neg {
            log::warn!(
                "frame {}: update skipped, memory holds {} positives and {} negatives (need {}+{})",
                self.frame_count,
                pos.len(),
                neg.len(),
                self.cfg.batch_pos,
                self.cfg.batch_neg
            );
            self.counters.skipped_updates.push(self.frame_count);
            return Ok(false);
        }
        let train = self.cfg.train_config(self.cfg.update_lr, self.cfg.update_iterations);
        for _ in 0..self.cfg.update_iterations {
            let (pi, ni) = draw_batch(
                pos.len(),
                neg.len(),
                self.cfg.batch_pos,
                self.cfg.batch_neg,
                &mut self.batch_rng,
            )?;
            let batch: Vec<&LabeledSample> =
                pi.iter().map(|&i| pos[i]).chain(ni.iter().map(|&i| neg[i])).collect();
            let loss = train_iteration(&mut self.head, &self.fx, &batch, &train, &mut self.update_opt)?;
            log::trace!("frame {} update: ce {:.4} reg {:.4}", self.frame_count, loss.ce, loss.reg);
            self.counters.update_iterations += 1;
            self.counters.batches.push((pi.len(), ni.len()));
        }
        self.counters.update_frames.push(self.frame_count);
        Ok(true)
    }

    /// Attention maps of the current model on the patch cropped at `b`.
    pub fn attention(&self, frame: &Frame, b: &BoundingBox) -> Result<AttentionPair> {
        let patch = extract_patch(frame, b, &self.cfg.patch)?;
        Ok(attention_maps(&self.head, &self.fx, &patch)?.remove(0))
    }
}

/// Index of the first maximum.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
