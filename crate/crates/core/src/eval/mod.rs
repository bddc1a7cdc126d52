//! One-pass evaluation, lambda sweeps, sequence I/O and synthetic sequences.

mod metrics;
mod ope;
mod sequence;
pub mod synth;

pub use metrics::{compute_metrics, os_threshold, MetricsReport, DP_AT, DP_MAX, OS_POINTS};
pub use ope::{
    lambda_sweep, run_ope, score_sequence, sweep_csv, track_sequence, OpeReport, SequenceOutcome,
    SweepRow,
};
pub use sequence::{read_boxes, write_boxes, Sequence, SequenceRecord, GROUNDTRUTH_FILE, IMAGE_DIR};
pub use synth::{generate_sequence, render_sequence, SynthConfig};
