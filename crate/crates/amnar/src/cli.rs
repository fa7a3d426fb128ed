//! Command-line pipeline. Every subcommand reads and writes the formats of
//! this crate, prints its resolved configuration and seed to stderr, and
//! never modifies its inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use amnar_core::dataset::{curate_samples, SampleStrategy, SegmentSource, TrainingSample, VideoRecord};
use amnar_core::detector::{
    calibrate, calibration_distances, detect_video, merge_distances, uncalibrated_classes, CandidateMode,
    DetectOptions, MissingThresholdPolicy, SegmentVerdict, DEFAULT_QUANTILE,
};
use amnar_core::eval::{evaluate, EvalOptions, VideoVerdicts};
use amnar_core::graph::{build_task_graph, graph_metrics, transition_stats};
use amnar_core::papb::valid_next_actions;
use amnar_core::rrb::{gradient_check, init_params, train, RrbConfig, TrainOptions};
use amnar_core::synth::{generate_video, sample_centers, sample_graph, SynthConfig};
use amnar_core::ClassId;
use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::files::{
    load_graph, load_model, load_thresholds, read_json, save_graph, save_model, save_thresholds, write_json,
};
use crate::records::{read_jsonl, write_jsonl, SampleRecord, VerdictRecord};
use crate::store::{emit_dataset, load_split, validate_split, StoredDataset, StoredVideo, SPLITS};
use crate::timeline::{render_svg, TimelineRow};

#[derive(Debug, Parser)]
#[command(name = "amnar", version, about = "Procedural error detection with multiple valid next actions")]
pub struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Simulate(SimulateArgs),
    /// Build a task graph from the ground-truth action sequences of a split.
    BuildGraph(BuildGraphArgs),
    /// Non-determinism statistics of a graph over a split.
    GraphMetrics(GraphMetricsArgs),
    /// Print the valid next actions after an executed sequence.
    PredictNext(PredictNextArgs),
    /// Curate training samples from ground-truth and predicted segments.
    Prep(PrepArgs),
    /// Train the reconstruction model.
    Train(TrainArgs),
    /// Calibrate per-class thresholds on normal videos.
    Calibrate(CalibrateArgs),
    /// Flag erroneous segments.
    Detect(DetectArgs),
    /// Score verdicts against error annotations.
    Eval(EvalArgs),
    /// Compare analytic and numerical gradients on a random instance.
    GradCheck(GradCheckArgs),
}

/// Which segment stream of a split to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceArg {
    Gt,
    Pred,
}

impl From<SourceArg> for SegmentSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Gt => SegmentSource::Gt,
            SourceArg::Pred => SegmentSource::Pred,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingArg {
    Error,
    GlobalQuantile,
}

impl From<MissingArg> for MissingThresholdPolicy {
    fn from(m: MissingArg) -> Self {
        match m {
            MissingArg::Error => MissingThresholdPolicy::Error,
            MissingArg::GlobalQuantile => MissingThresholdPolicy::GlobalQuantile,
        }
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn closed_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON document with `SynthConfig` fields; omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, env = "AMNAR_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildGraphArgs {
    /// Split directory whose ground-truth segments provide the sequences.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of action classes; inferred from the largest label if omitted.
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GraphMetricsArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Split directory providing the transition statistics.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictNextArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Comma-separated executed class ids.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub executed: Vec<ClassId>,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum overlap of a predicted segment with the ground truth.
    #[arg(long, default_value_t = 0.6, value_parser = closed_unit)]
    pub tau: f64,
    /// Use ground-truth segments only.
    #[arg(long, conflicts_with = "pred_only")]
    pub gt_only: bool,
    /// Use filtered, relabeled predicted segments only.
    #[arg(long)]
    pub pred_only: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Samples written by `prep`.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub attn_window: usize,
    #[arg(long, env = "AMNAR_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Split directory of normal videos.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_QUANTILE, value_parser = open_unit)]
    pub q: f64,
    #[arg(long, value_enum, default_value_t = SourceArg::Gt)]
    pub segments: SourceArg,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SourceArg::Gt)]
    pub segments: SourceArg,
    #[arg(long, value_enum, default_value_t = MissingArg::Error)]
    pub missing_threshold: MissingArg,
    /// Match against one randomly drawn valid next action instead of all.
    #[arg(long)]
    pub single_candidate: bool,
    /// Seed of the single-candidate draw.
    #[arg(long, env = "AMNAR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Split directory with the error annotations.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Graph for the non-deterministic frame accuracy.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render a per-segment timeline.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Fraction of a segment that must lie in error spans for it to count as erroneous.
    #[arg(long, default_value_t = 0.5, value_parser = closed_unit)]
    pub overlap: f64,
    /// Report plain instead of balanced segment accuracy as `eda`.
    #[arg(long)]
    pub plain: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    #[arg(long, default_value_t = 8)]
    pub attn_window: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, env = "AMNAR_SEED", default_value_t = 0)]
    pub seed: u64,
}

fn announce(command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<()> {
    let config = serde_json::to_string(config)?;
    eprintln!("amnar {command}: resolved config {config}");
    match seed {
        Some(s) => eprintln!("amnar {command}: seed {s}"),
        None => eprintln!("amnar {command}: seed none"),
    }
    Ok(())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn print_or_write<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::GraphMetrics(a) => graph_metrics_cmd(a),
        Command::PredictNext(a) => predict_next(a),
        Command::Prep(a) => prep(a),
        Command::Train(a) => train_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(path) => read_json(path)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate().context("invalid simulation config")?;
    announce("simulate", &cfg, Some(cfg.seed))?;

    let graph = sample_graph(&cfg)?;
    let centers = sample_centers(&cfg)?;
    let counts = [cfg.train_videos, cfg.calib_videos, cfg.test_videos];
    let splits = pool(a.jobs)?.install(|| {
        SPLITS
            .iter()
            .zip(counts)
            .map(|(&split, n)| {
                (0..n)
                    .into_par_iter()
                    .map(|i| generate_video(&graph, &centers, &cfg, split, i).map(|v| StoredVideo::from(&v)))
                    .collect::<amnar_core::Result<Vec<_>>>()
            })
            .collect::<amnar_core::Result<Vec<_>>>()
    })?;
    let [train, calib, test]: [Vec<StoredVideo>; 3] = splits.try_into().expect("three splits");
    let data = StoredDataset { config: cfg, graph, train, calib, test };
    emit_dataset(&data, &a.out)?;
    eprintln!(
        "amnar simulate: wrote {} train, {} calib, {} test videos to {}",
        data.train.len(),
        data.calib.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(())
}

fn inferred_classes(videos: &[StoredVideo]) -> usize {
    let labels = videos.iter().flat_map(|v| {
        let frames = v.record.frame_labels.iter().flatten().copied();
        v.record.segments.iter().chain(&v.pred).map(|s| s.label).chain(frames)
    });
    labels.filter_map(|l| l.action()).max().map_or(0, |m| m as usize + 1)
}

fn build_graph(a: BuildGraphArgs) -> Result<()> {
    announce("build-graph", &a, None)?;
    let videos = load_split(&a.data)?;
    let num_classes = a.num_classes.unwrap_or_else(|| inferred_classes(&videos));
    validate_split(&a.data, &videos, num_classes)?;
    let sequences: Vec<Vec<ClassId>> = videos.iter().map(|v| v.record.action_sequence()).collect();
    let graph = build_task_graph(&sequences, num_classes)?;
    save_graph(&a.out, &graph)?;
    eprintln!("amnar build-graph: {} classes, {} edges", graph.num_classes(), graph.edge_count());
    Ok(())
}

fn graph_metrics_cmd(a: GraphMetricsArgs) -> Result<()> {
    announce("graph-metrics", &a, None)?;
    let graph = load_graph(&a.graph)?;
    let videos = load_split(&a.data)?;
    let sequences: Vec<Vec<ClassId>> = videos.iter().map(|v| v.record.action_sequence()).collect();
    let metrics = graph_metrics(&graph, &transition_stats(&sequences));
    print_or_write(a.out.as_deref(), &metrics)
}

fn predict_next(a: PredictNextArgs) -> Result<()> {
    announce("predict-next", &a, None)?;
    let graph = load_graph(&a.graph)?;
    let next: Vec<ClassId> = valid_next_actions(&graph, &a.executed).into_iter().collect();
    println!("{}", serde_json::to_string(&next)?);
    Ok(())
}

fn prep(a: PrepArgs) -> Result<()> {
    announce("prep", &a, None)?;
    let strategy = match (a.gt_only, a.pred_only) {
        (true, _) => SampleStrategy::GtOnly,
        (_, true) => SampleStrategy::PredOnly,
        _ => SampleStrategy::Hybrid,
    };
    let videos = load_split(&a.data)?;
    let mut out = Vec::new();
    for v in &videos {
        let r = &v.record;
        let specs = curate_samples(&r.segments, &v.pred, r.frame_labels.as_deref(), a.tau, strategy)
            .with_context(|| format!("{}: video {}", a.data.display(), r.id))?;
        out.extend(specs.iter().map(|s| SampleRecord::new(&r.id, s)));
    }
    write_jsonl(&a.out, &out)?;
    eprintln!("amnar prep: {} samples ({strategy:?})", out.len());
    Ok(())
}

fn by_id(videos: &[StoredVideo]) -> BTreeMap<&str, &StoredVideo> {
    videos.iter().map(|v| (v.record.id.as_str(), v)).collect()
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    announce("train", &a, Some(a.seed))?;
    let videos = load_split(&a.data)?;
    let index = by_id(&videos);
    let records: Vec<SampleRecord> = read_jsonl(&a.samples)?;
    let samples = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v = index
                .get(r.video.as_str())
                .with_context(|| format!("{}:{}: unknown video {:?}", a.samples.display(), i + 1, r.video))?;
            r.spec().materialize(&v.record.features).with_context(|| format!("{}:{}", a.samples.display(), i + 1))
        })
        .collect::<Result<Vec<TrainingSample>>>()?;
    let dim = samples.first().map(|s| s.target_feature.len()).context("no training samples")?;
    let config = RrbConfig { attn_window: a.attn_window, ..RrbConfig::new(dim) };
    let opts = TrainOptions { epochs: a.epochs, batch_size: a.batch_size, lr0: a.lr, seed: a.seed };
    let outcome = train(&samples, config, &opts)?;
    save_model(&a.out, &outcome.model)?;
    if let (Some(first), Some(last)) = (outcome.epoch_losses.first(), outcome.epoch_losses.last()) {
        eprintln!("amnar train: {} samples, loss {first:.6} -> {last:.6}", samples.len());
    }
    Ok(())
}

fn records(videos: &[StoredVideo], source: SourceArg) -> Vec<VideoRecord> {
    videos.iter().map(|v| v.with_segments(source.into())).collect()
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    announce("calibrate", &a, None)?;
    let graph = load_graph(&a.graph)?;
    let model = load_model(&a.model)?;
    let videos = load_split(&a.data)?;
    validate_split(&a.data, &videos, graph.num_classes())?;
    let videos = records(&videos, a.segments);
    let parts = pool(a.jobs)?.install(|| {
        videos
            .par_iter()
            .map(|v| calibration_distances(std::iter::once(v), &model, &graph))
            .collect::<amnar_core::Result<Vec<_>>>()
    })?;
    let table = calibrate(&merge_distances(parts), a.q)?;
    let missing = uncalibrated_classes(&model, &table);
    if !missing.is_empty() {
        log::warn!("no calibration segments for classes {missing:?}");
    }
    save_thresholds(&a.out, &table)?;
    eprintln!("amnar calibrate: {} class thresholds at q = {}", table.thresholds.len(), table.q);
    Ok(())
}

fn detect(a: DetectArgs) -> Result<()> {
    announce("detect", &a, Some(a.seed))?;
    let graph = load_graph(&a.graph)?;
    let model = load_model(&a.model)?;
    let thresholds = load_thresholds(&a.thresholds)?;
    let videos = load_split(&a.data)?;
    validate_split(&a.data, &videos, graph.num_classes())?;
    let videos = records(&videos, a.segments);
    let opts = DetectOptions {
        missing_threshold: a.missing_threshold.into(),
        candidates: if a.single_candidate { CandidateMode::SingleRandom { seed: a.seed } } else { CandidateMode::All },
    };
    let verdicts = pool(a.jobs)?.install(|| {
        videos
            .par_iter()
            .map(|v| detect_video(v, &model, &graph, &thresholds, &opts).with_context(|| format!("video {}", v.id)))
            .collect::<Result<Vec<_>>>()
    })?;
    let out: Vec<VerdictRecord> =
        videos.iter().zip(&verdicts).flat_map(|(v, vs)| vs.iter().map(|x| VerdictRecord::new(&v.id, x))).collect();
    write_jsonl(&a.out, &out)?;
    let flagged = out.iter().filter(|r| r.is_error).count();
    eprintln!("amnar detect: {} segments, {flagged} flagged", out.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    announce("eval", &a, None)?;
    let videos = load_split(&a.data)?;
    let graph = a.graph.as_deref().map(load_graph).transpose()?;
    let mut grouped: BTreeMap<&str, Vec<SegmentVerdict>> =
        videos.iter().map(|v| (v.record.id.as_str(), Vec::new())).collect();
    let records: Vec<VerdictRecord> = read_jsonl(&a.verdicts)?;
    for (i, r) in records.iter().enumerate() {
        match grouped.get_mut(r.video.as_str()) {
            Some(list) => list.push(r.verdict()),
            None => bail!("{}:{}: video {:?} is not in {}", a.verdicts.display(), i + 1, r.video, a.data.display()),
        }
    }
    let inputs: Vec<VideoVerdicts<'_>> = videos
        .iter()
        .map(|v| VideoVerdicts {
            id: &v.record.id,
            verdicts: &grouped[v.record.id.as_str()],
            error_spans: &v.record.error_spans,
        })
        .collect();
    let opts = EvalOptions { overlap_threshold: a.overlap, balanced: !a.plain };
    let report = evaluate(&inputs, graph.as_ref(), &opts);
    ensure!(report.error_segments + report.normal_segments > 0, "no verdicts to evaluate");
    if let Some(path) = &a.svg {
        let rows: Vec<TimelineRow<'_>> = videos
            .iter()
            .zip(&inputs)
            .map(|(v, i)| TimelineRow {
                id: i.id,
                frames: v.record.features.frames(),
                verdicts: i.verdicts,
                error_spans: i.error_spans,
            })
            .collect();
        std::fs::write(path, render_svg(&rows)).with_context(|| format!("{}", path.display()))?;
    }
    print_or_write(a.out.as_deref(), &report)
}

#[derive(Debug, Serialize)]
struct GradCheckOutput {
    max_rel_error: f64,
    checked: usize,
    skipped: usize,
    tolerance: f64,
    pass: bool,
}

fn grad_check(a: GradCheckArgs) -> Result<()> {
    announce("grad-check", &a, Some(a.seed))?;
    ensure!(a.frames > 0, "--frames must be positive");
    let config = RrbConfig { attn_window: a.attn_window, ..RrbConfig::new(a.dim) };
    let mut params = init_params(config, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    // The residual head starts at zero, which would leave most gradients trivially zero.
    for w in params.res_weight.iter_mut().chain(params.res_bias.iter_mut()) {
        *w = rng.random_range(-0.5..0.5);
    }
    let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let center = uniform(a.dim);
    let sample = TrainingSample {
        context: amnar_core::dataset::FeatureMatrix::from_flat(a.frames, a.dim, uniform(a.frames * a.dim))?,
        target_class: 0,
        target_feature: uniform(a.dim),
    };
    let report = gradient_check(&params, &center, &sample);
    let pass = report.max_rel_error < a.tolerance;
    let out = GradCheckOutput {
        max_rel_error: report.max_rel_error,
        checked: report.checked,
        skipped: report.skipped,
        tolerance: a.tolerance,
        pass,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    ensure!(pass, "gradient check failed: {} >= {}", report.max_rel_error, a.tolerance);
    Ok(())
}
