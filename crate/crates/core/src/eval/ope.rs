use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{compute_metrics, MetricsReport};
use super::sequence::Sequence;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::Frame;
use crate::tracker::{FrameResult, Tracker, TrackerConfig};

/// Initializes on the first ground-truth box and tracks to the end without
/// reinitialization. The first output box is the initialization box.
/// `observe` sees the tracker after every tracked frame.
pub fn track_sequence<F>(seq: &Sequence, cfg: &TrackerConfig, mut observe: F) -> Result<Vec<BoundingBox>>
where
    F: FnMut(&Tracker, usize, &Frame, &FrameResult) -> Result<()>,
{
    seq.validate()?;
    let mut tracker = Tracker::init(&seq.frames[0], &seq.truth[0], cfg.clone())?;
    let mut out = Vec::with_capacity(seq.len());
    out.push(seq.truth[0]);
    for (i, frame) in seq.frames.iter().enumerate().skip(1) {
        let r = tracker.track_frame(frame)?;
        observe(&tracker, i, frame, &r)?;
        out.push(r.output());
    }
    Ok(out)
}

/// Scores tracked boxes, leaving out the initialization frame.
pub fn score_sequence(predicted: &[BoundingBox], truth: &[BoundingBox]) -> Result<MetricsReport> {
    if predicted.len() != truth.len() || predicted.len() < 2 {
        return Err(Error::Config(format!(
            "cannot score {} boxes against {} ground-truth boxes",
            predicted.len(),
            truth.len()
        )));
    }
    compute_metrics(&predicted[1..], &truth[1..])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceOutcome {
    pub name: String,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
    #[serde(skip)]
    pub boxes: Vec<BoundingBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpeReport {
    /// Ordered by sequence name.
    pub sequences: Vec<SequenceOutcome>,
    /// Mean over sequences that completed.
    pub aggregate: Option<MetricsReport>,
}

impl OpeReport {
    pub fn failures(&self) -> usize {
        self.sequences.iter().filter(|s| s.error.is_some()).count()
    }
}

/// One-pass evaluation of `cfg` on every sequence. A tracker error fails
/// only its own sequence.
pub fn run_ope(sequences: &[Sequence], cfg: &TrackerConfig) -> Result<OpeReport> {
    cfg.validate()?;
    let mut outcomes: Vec<SequenceOutcome> = sequences
        .par_iter()
        .map(|seq| {
            let run = track_sequence(seq, cfg, |_, _, _, _| Ok(()))
                .and_then(|boxes| score_sequence(&boxes, &seq.truth).map(|r| (boxes, r)));
            match run {
                Ok((boxes, report)) => SequenceOutcome {
                    name: seq.name.clone(),
                    report: Some(report),
                    error: None,
                    boxes,
                },
                Err(e) => {
                    log::error!("sequence {}: {e}", seq.name);
                    SequenceOutcome {
                        name: seq.name.clone(),
                        report: None,
                        error: Some(e.to_string()),
                        boxes: Vec::new(),
                    }
                }
            }
        })
        .collect();
    outcomes.sort_by(|a, b| a.name.cmp(&b.name));
    let done: Vec<MetricsReport> = outcomes.iter().filter_map(|o| o.report.clone()).collect();
    Ok(OpeReport {
        aggregate: MetricsReport::mean(&done),
        sequences: outcomes,
    })
}

/// One row of a lambda sweep, averaged over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub dp20: f64,
    pub auc: f64,
    /// Sequence runs that failed, over all seeds.
    pub failures: usize,
}

/// Runs OPE for every `lambda` and seed. A seed fixes the proposal and batch
/// draws, so all lambdas see the same samples until their trackers diverge.
pub fn lambda_sweep(
    sequences: &[Sequence],
    base: &TrackerConfig,
    lambdas: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("lambda {l} must be finite and >= 0")));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let mut dp = 0.0;
            let mut auc = 0.0;
            let mut failures = 0;
            for &seed in seeds {
                let cfg = TrackerConfig {
                    lambda,
                    seed,
                    ..base.clone()
                };
                let r = run_ope(sequences, &cfg)?;
                failures += r.failures();
                let agg = r.aggregate.as_ref();
                dp += agg.map_or(f64::NAN, |a| a.dp20);
                auc += agg.map_or(f64::NAN, |a| a.auc);
            }
            let n = seeds.len() as f64;
            Ok(SweepRow {
                lambda,
                dp20: dp / n,
                auc: auc / n,
                failures,
            })
        })
        .collect()
}

/// `lambda,dp20,auc` table.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,dp20,auc\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6}\n", r.lambda, r.dp20, r.auc));
    }
    out
}
