//! Command-line front end. Every command validates its inputs before it
//! creates or writes anything under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::synth::occlusion_suite;
use crate::eval::{
    generate_sequence, lambda_sweep, read_boxes, render_sequence, score_sequence, sweep_csv,
    track_sequence, write_boxes, Sequence, SequenceRecord, SynthConfig, GROUNDTRUTH_FILE,
};
use crate::model::Frame;
use crate::tracker::{Tracker, TrackerConfig};

pub const RESULTS_FILE: &str = "results.txt";
pub const METRICS_FILE: &str = "metrics.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Tracking run configuration file. Omitted fields take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub sequence: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "recitrack", version, about = "Attention-regularized tracking-by-detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a sequence from its first ground-truth box; writes results.txt and metrics.json.
    Track(TrackArgs),
    /// Track a sequence and export positive attention maps as grayscale PNGs.
    Attention(AttentionArgs),
    /// Evaluate several lambda values over sequences and seeds; writes sweep.csv.
    Sweep(SweepArgs),
    /// Generate synthetic sequences.
    Synth(SynthArgs),
    /// Score an existing results file against ground truth; writes metrics.json.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Sequence directory holding img/ and groundtruth_rect.txt.
    #[arg(long)]
    pub sequence: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed; falls back to RECIP_SEED, then to the configuration.
    #[arg(long, env = "RECIP_SEED")]
    pub seed: Option<u64>,
    /// Attention regularization weight, overriding the configuration.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated 1-based frame numbers.
    #[arg(long, value_delimiter = ',', required = true)]
    pub frames: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory whose subdirectories are sequences.
    #[arg(long, conflicts_with = "synthetic_suite")]
    pub sequences: Option<PathBuf>,
    /// Use the built-in synthetic occlusion suite instead of --sequences.
    #[arg(long)]
    pub synthetic_suite: bool,
    /// JSON run configuration; only its tracker section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    /// Comma-separated seeds; every lambda runs with every seed.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic-sequence configuration.
    #[arg(long, conflicts_with = "suite")]
    pub config: Option<PathBuf>,
    /// Write the built-in occlusion suite, one subdirectory per sequence.
    #[arg(long)]
    pub suite: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Tracked boxes, one x,y,w,h line per frame.
    #[arg(long)]
    pub results: PathBuf,
    /// Ground-truth file, or a sequence directory containing groundtruth_rect.txt.
    #[arg(long)]
    pub groundtruth: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and maps failures to exit code 1.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Track(a) => cmd_track(&a),
        Command::Attention(a) => cmd_attention(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

struct Prepared {
    cfg: TrackerConfig,
    sequence: Sequence,
    out: PathBuf,
}

fn prepare(run: &RunArgs) -> Result<Prepared> {
    let file = RunConfig::load(run.config.as_deref())?;
    let mut cfg = file.tracker;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(lambda) = run.lambda {
        cfg.lambda = lambda;
    }
    cfg.validate()?;
    let seq_dir = run
        .sequence
        .clone()
        .or(file.sequence)
        .ok_or_else(|| Error::Config("no sequence given (--sequence or config)".into()))?;
    let out = run
        .out
        .clone()
        .or(file.out)
        .ok_or_else(|| Error::Config("no output directory given (--out or config)".into()))?;
    let sequence = SequenceRecord::open(&seq_dir)?.load()?;
    Ok(Prepared { cfg, sequence, out })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn cmd_track(a: &TrackArgs) -> Result<()> {
    let p = prepare(&a.run)?;
    log::info!("tracking {} ({} frames)", p.sequence.name, p.sequence.len());
    let boxes = track_sequence(&p.sequence, &p.cfg, |_, _, _, _| Ok(()))?;
    let report = score_sequence(&boxes, &p.sequence.truth)?;
    create_dir(&p.out)?;
    write_boxes(&p.out.join(RESULTS_FILE), &boxes)?;
    write_file(&p.out.join(METRICS_FILE), &serde_json::to_string_pretty(&report)?)?;
    log::info!("dp20 {:.4} auc {:.4} cle {:.2}", report.dp20, report.auc, report.cle);
    Ok(())
}

/// Grayscale image of a map scaled so its maximum becomes 255.
pub fn attention_image(values: &[f64], width: usize, height: usize) -> Result<Frame> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let data = values
        .iter()
        .map(|&v| if max > 0.0 { (v / max * 255.0) as f32 } else { 0.0 })
        .collect();
    Frame::new(width, height, 1, data)
}

pub fn cmd_attention(a: &AttentionArgs) -> Result<()> {
    let p = prepare(&a.run)?;
    let n = p.sequence.len();
    if let Some(bad) = a.frames.iter().find(|&&f| f == 0 || f > n) {
        return Err(Error::Config(format!("frame {bad} is outside 1..={n}")));
    }
    let mut wanted = a.frames.clone();
    wanted.sort_unstable();
    wanted.dedup();
    let last = *wanted.last().expect("clap requires at least one frame");
    let seq = &p.sequence;
    let mut tracker = Tracker::init(&seq.frames[0], &seq.truth[0], p.cfg.clone())?;
    let mut current = seq.truth[0];
    let mut maps = Vec::new();
    for i in 0..last {
        if i > 0 {
            current = tracker.track_frame(&seq.frames[i])?.output();
        }
        if wanted.binary_search(&(i + 1)).is_ok() {
            maps.push((i + 1, tracker.attention(&seq.frames[i], &current)?));
        }
    }
    create_dir(&p.out)?;
    for (idx, pair) in maps {
        let img = attention_image(&pair.positive, pair.width, pair.height)?;
        img.save_png(&p.out.join(format!("attn_{idx:04}.png")))?;
    }
    Ok(())
}

fn load_sequences_dir(dir: &Path) -> Result<Vec<Sequence>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUNDTRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "{}: no subdirectory contains {GROUNDTRUTH_FILE}",
            dir.display()
        )));
    }
    dirs.iter().map(|d| SequenceRecord::open(d)?.load()).collect()
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?.tracker;
    cfg.validate()?;
    let sequences = match (&a.sequences, a.synthetic_suite) {
        (Some(dir), false) => load_sequences_dir(dir)?,
        (None, true) => occlusion_suite().iter().map(render_sequence).collect::<Result<_>>()?,
        _ => return Err(Error::Config("give exactly one of --sequences or --synthetic-suite".into())),
    };
    let rows = lambda_sweep(&sequences, &cfg, &a.lambdas, &a.seeds)?;
    create_dir(&a.out)?;
    write_file(&a.out.join(SWEEP_FILE), &sweep_csv(&rows))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let configs = if a.suite {
        occlusion_suite()
    } else {
        let cfg: SynthConfig = match &a.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
            }
            None => SynthConfig::default(),
        };
        vec![cfg]
    };
    for c in &configs {
        c.validate()?;
    }
    if a.suite {
        for c in &configs {
            generate_sequence(c, &a.out.join(&c.name))?;
        }
    } else {
        generate_sequence(&configs[0], &a.out)?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let predicted = read_boxes(&a.results)?;
    let gt_path = if a.groundtruth.is_dir() {
        a.groundtruth.join(GROUNDTRUTH_FILE)
    } else {
        a.groundtruth.clone()
    };
    let truth = read_boxes(&gt_path)?;
    let report = score_sequence(&predicted, &truth)?;
    create_dir(&a.out)?;
    write_file(&a.out.join(METRICS_FILE), &serde_json::to_string_pretty(&report)?)
}
