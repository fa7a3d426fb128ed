//! Deterministic synthetic procedural-task data: layered task graphs, normal
//! executions rendered as feature streams, injected errors and noisy
//! segmentation output.
//!
//! Class centers live in the first `dim - drift_dims` coordinates. Every video
//! carries a drift vector in the remaining coordinates that is added to all of
//! its frames, including a background lead-in, so the drift is observable from
//! context while the static class means cannot account for it.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ActionSegment, ErrorSpan, FeatureMatrix, Label, VideoRecord};
use crate::graph::TaskGraph;
use crate::math::{ceil, distance, floor, sqrt};
use crate::papb::valid_next_actions;
use crate::{ClassId, Error, Result};

/// Per-segment probabilities of each injected error kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorRates {
    pub omission: f64,
    pub addition: f64,
    pub modification: f64,
    pub deviation: f64,
}

impl ErrorRates {
    pub fn total(&self) -> f64 {
        self.omission + self.addition + self.modification + self.deviation
    }
}

/// Emulated action-segmentation noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsmNoise {
    /// Probability that an action segment gets a different class.
    pub mislabel: f64,
    /// Maximum shift, in frames, of each boundary between adjacent segments.
    pub jitter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_classes: usize,
    /// Mean out-degree of non-sink action nodes.
    pub branching: f64,
    pub dim: usize,
    /// Trailing coordinates reserved for the per-video drift.
    pub drift_dims: usize,
    /// Inclusive range of frames per action segment.
    pub segment_frames: [usize; 2],
    /// Inclusive range of background frames before the first action.
    pub lead_in_frames: [usize; 2],
    /// Minimum distance between two class centers.
    pub center_spacing: f64,
    pub noise_sigma: f64,
    pub drift_amplitude: f64,
    pub train_videos: usize,
    /// Error-free videos held out for threshold calibration.
    pub calib_videos: usize,
    pub test_videos: usize,
    pub errors: ErrorRates,
    /// Displacement applied to every frame of a deviation segment.
    pub deviation_margin: f64,
    pub asm: AsmNoise,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_classes: 24,
            branching: 2.0,
            dim: 8,
            drift_dims: 2,
            segment_frames: [4, 8],
            lead_in_frames: [4, 8],
            center_spacing: 6.0,
            noise_sigma: 0.3,
            drift_amplitude: 2.0,
            train_videos: 60,
            calib_videos: 20,
            test_videos: 40,
            errors: ErrorRates { omission: 0.02, addition: 0.05, modification: 0.03, deviation: 0.1 },
            deviation_margin: 2.0,
            asm: AsmNoise { mislabel: 0.1, jitter: 1 },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_classes < 2 {
            return fail(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if !(self.branching >= 1.0 && self.branching.is_finite()) {
            return fail(format!("branching must be at least 1, got {}", self.branching));
        }
        if self.drift_dims >= self.dim {
            return fail(format!(
                "drift_dims {} leaves no room for class centers in dim {}",
                self.drift_dims, self.dim
            ));
        }
        for (name, [lo, hi]) in [("segment_frames", self.segment_frames), ("lead_in_frames", self.lead_in_frames)] {
            if lo > hi {
                return fail(format!("{name}: {lo} > {hi}"));
            }
        }
        if self.segment_frames[0] == 0 {
            return fail("segment_frames must start at 1 or more".into());
        }
        if !(self.center_spacing > 0.0 && self.center_spacing.is_finite()) {
            return fail(format!("center_spacing must be positive, got {}", self.center_spacing));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("drift_amplitude", self.drift_amplitude),
            ("deviation_margin", self.deviation_margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        let e = &self.errors;
        for (name, r) in [
            ("errors.omission", e.omission),
            ("errors.addition", e.addition),
            ("errors.modification", e.modification),
            ("errors.deviation", e.deviation),
            ("asm.mislabel", self.asm.mislabel),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        if e.total() > 1.0 {
            return fail(format!("error rates sum to {} > 1", e.total()));
        }
        Ok(())
    }

    fn center_dims(&self) -> usize {
        self.dim - self.drift_dims
    }
}

/// Which part of the dataset a video belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Calib,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calib => "calib",
            Split::Test => "test",
        }
    }

    fn stream(self, index: usize) -> u64 {
        let tag: u64 = match self {
            Split::Train => 1,
            Split::Test => 2,
            Split::Calib => 3,
        };
        (tag << 32) | index as u64
    }
}

/// A generated video with its noisy segmentation and drift vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    /// Features, ground-truth segments, frame labels and error spans.
    pub record: VideoRecord,
    /// Segments as a noisy segmentation model would report them.
    pub pred: Vec<ActionSegment>,
    pub drift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub graph: TaskGraph,
    pub centers: Vec<Vec<f64>>,
    pub train: Vec<SynthVideo>,
    pub calib: Vec<SynthVideo>,
    pub test: Vec<SynthVideo>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random layered DAG. Layers hold `ceil(b) + 1` nodes (one node for
/// `b = 1`, which gives a chain); each non-sink node links to node `j mod w`
/// of the next layer plus random extra children so its out-degree is
/// `floor(b)` or `floor(b) + 1` with mean `b`. The start node feeds layer 0.
pub fn sample_graph(cfg: &SynthConfig) -> Result<TaskGraph> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let b = cfg.branching;
    let width = if b <= 1.0 { 1 } else { ceil(b) as usize + 1 };
    let nodes: Vec<ClassId> = (0..cfg.n_classes as ClassId).collect();
    let layers: Vec<&[ClassId]> = nodes.chunks(width).collect();
    let start = cfg.n_classes as ClassId;
    let mut edges: Vec<(ClassId, ClassId)> = layers[0].iter().map(|&v| (start, v)).collect();
    let base = floor(b) as usize;
    let frac = b - floor(b);
    for pair in layers.windows(2) {
        let (layer, next) = (pair[0], pair[1]);
        for (j, &u) in layer.iter().enumerate() {
            let degree = (base + usize::from(rng.random_bool(frac))).clamp(1, next.len());
            let first = next[j % next.len()];
            let mut rest: Vec<ClassId> = next.iter().copied().filter(|&v| v != first).collect();
            rest.shuffle(&mut rng);
            edges.push((u, first));
            edges.extend(rest.into_iter().take(degree - 1).map(|v| (u, v)));
        }
    }
    TaskGraph::from_edges(cfg.n_classes, edges)
}

/// Class centers spread over the leading coordinates with pairwise distance
/// at least `center_spacing`.
pub fn sample_centers(cfg: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 1);
    let k = cfg.center_dims();
    let n = cfg.n_classes;
    let mut half = 0.75 * cfg.center_spacing * libm::pow(n as f64, 1.0 / k as f64).max(1.0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut failures = 0;
    while centers.len() < n {
        let mut c: Vec<f64> = (0..k).map(|_| rng.random_range(-half..=half)).collect();
        if centers.iter().all(|o| distance(&o[..k], &c) >= cfg.center_spacing) {
            c.resize(cfg.dim, 0.0);
            centers.push(c);
            failures = 0;
        } else {
            failures += 1;
            if failures % 1000 == 0 {
                half *= 1.05;
            }
        }
    }
    Ok(centers)
}

fn drift_vector(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<f64> {
    let mut d = vec![0.0; cfg.dim];
    let k = cfg.center_dims();
    if cfg.drift_dims > 0 {
        let dir: Vec<f64> = (0..cfg.drift_dims).map(|_| gaussian(rng)).collect();
        let norm = sqrt(dir.iter().map(|x| x * x).sum());
        if norm > 0.0 {
            for (slot, x) in d[k..].iter_mut().zip(&dir) {
                *slot = cfg.drift_amplitude * x / norm;
            }
        }
    }
    d
}

/// Random unit vector inside the center coordinates.
fn center_direction(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<f64> {
    let k = cfg.center_dims();
    loop {
        let dir: Vec<f64> = (0..k).map(|_| gaussian(rng)).collect();
        let norm = sqrt(dir.iter().map(|x| x * x).sum());
        if norm > 1e-12 {
            let mut out: Vec<f64> = dir.iter().map(|x| x / norm).collect();
            out.resize(cfg.dim, 0.0);
            return out;
        }
    }
}

fn render_frames(out: &mut Vec<f64>, mean: &[f64], frames: usize, sigma: f64, rng: &mut impl Rng) {
    for _ in 0..frames {
        out.extend(mean.iter().map(|m| if sigma > 0.0 { m + sigma * gaussian(rng) } else { *m }));
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sample_len(range: [usize; 2], rng: &mut impl Rng) -> usize {
    rng.random_range(range[0]..=range[1])
}

fn frame_labels(segments: &[ActionSegment], frames: usize) -> Vec<Label> {
    let mut labels = vec![Label::Background; frames];
    for s in segments {
        labels[s.st..s.ed].iter_mut().for_each(|l| *l = s.label);
    }
    labels
}

/// Random walk from the start node to a sink; each visited class becomes a
/// segment of `center + drift + noise` frames after a background lead-in of
/// `drift + noise` frames.
pub fn generate_normal_video(
    graph: &TaskGraph,
    centers: &[Vec<f64>],
    cfg: &SynthConfig,
    id: impl Into<String>,
    rng: &mut impl Rng,
) -> Result<SynthVideo> {
    let dim = cfg.dim;
    if centers.len() < graph.num_classes() || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::Config(format!("need {} centers of dimension {dim}", graph.num_classes())));
    }
    let drift = drift_vector(cfg, rng);
    let mut values = Vec::new();
    let mut segments = Vec::new();
    let lead = sample_len(cfg.lead_in_frames, rng);
    if lead > 0 {
        render_frames(&mut values, &drift, lead, cfg.noise_sigma, rng);
        segments.push(ActionSegment::new(Label::Background, 0, lead));
    }
    let mut node = graph.start_node();
    let mut t = lead;
    while let Some(&next) = graph.successors_or_empty(node).choose(rng) {
        node = next;
        let len = sample_len(cfg.segment_frames, rng);
        render_frames(&mut values, &add(&centers[node as usize], &drift), len, cfg.noise_sigma, rng);
        segments.push(ActionSegment::new(node, t, t + len));
        t += len;
    }
    let features = FeatureMatrix::from_flat(t, dim, values)?;
    let record = VideoRecord {
        id: id.into(),
        features,
        frame_labels: Some(frame_labels(&segments, t)),
        segments,
        error_spans: Vec::new(),
    };
    Ok(SynthVideo { pred: record.segments.clone(), record, drift })
}

enum Kind {
    Omission,
    Addition,
    Modification,
    Deviation,
}

fn draw_kind(rates: &ErrorRates, rng: &mut impl Rng) -> Option<Kind> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (rate, kind) in [
        (rates.omission, Kind::Omission),
        (rates.addition, Kind::Addition),
        (rates.modification, Kind::Modification),
        (rates.deviation, Kind::Deviation),
    ] {
        acc += rate;
        if u < acc {
            return Some(kind);
        }
    }
    None
}

/// Applies errors segment by segment with the configured per-kind rates.
///
/// * omission: the segment is dropped and the following segment is annotated
///   (the last action is never omitted);
/// * addition: a class that is not a valid next action is inserted before
///   the segment;
/// * modification: the segment is re-rendered as a class that is not a
///   valid next action;
/// * deviation: the label is kept and every frame moves by
///   `deviation_margin` along a random direction of the center coordinates.
///
/// Inserted and replacement classes never occur elsewhere in the video.
pub fn inject_errors(
    video: &SynthVideo,
    graph: &TaskGraph,
    centers: &[Vec<f64>],
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<SynthVideo> {
    let src = &video.record;
    let dim = cfg.dim;
    let used: BTreeSet<ClassId> = src.segments.iter().filter_map(|s| s.label.action()).collect();
    let last_action = src.segments.iter().rposition(|s| !s.label.is_background());
    let mut values: Vec<f64> = Vec::with_capacity(src.features.values().len());
    let mut segments = Vec::new();
    let mut spans = Vec::new();
    let mut executed: Vec<ClassId> = Vec::new();
    let mut pending_omission = false;

    let off_graph = |executed: &[ClassId], exclude: Option<ClassId>, rng: &mut ChaCha8Rng| {
        let valid = valid_next_actions(graph, executed);
        let pool: Vec<ClassId> = (0..graph.num_classes() as ClassId)
            .filter(|c| !valid.contains(c) && !used.contains(c) && Some(*c) != exclude)
            .collect();
        pool.choose(rng).copied()
    };
    // Own stream so the draws above do not depend on the caller's generator type.
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());

    for (i, seg) in src.segments.iter().enumerate() {
        let Some(class) = seg.label.action() else {
            let st = values.len() / dim;
            values.extend_from_slice(src.features.view(seg.st..seg.ed).data());
            segments.push(ActionSegment::new(seg.label, st, st + seg.len()));
            continue;
        };
        let kind = if pending_omission { None } else { draw_kind(&cfg.errors, &mut local) };
        let mut st = values.len() / dim;
        let mut copy_kind: Option<&str> = pending_omission.then_some("omission");
        pending_omission = false;
        match kind {
            Some(Kind::Omission) if Some(i) != last_action => {
                pending_omission = true;
                continue;
            }
            Some(Kind::Addition) => {
                if let Some(x) = off_graph(&executed, None, &mut local) {
                    let len = sample_len(cfg.segment_frames, &mut local);
                    let mean = add(&centers[x as usize], &video.drift);
                    render_frames(&mut values, &mean, len, cfg.noise_sigma, &mut local);
                    segments.push(ActionSegment::new(x, st, st + len));
                    spans.push(ErrorSpan { st, ed: st + len, kind: "addition".into() });
                    executed.push(x);
                    st += len;
                }
            }
            Some(Kind::Modification) => {
                if let Some(x) = off_graph(&executed, Some(class), &mut local) {
                    let mean = add(&centers[x as usize], &video.drift);
                    render_frames(&mut values, &mean, seg.len(), cfg.noise_sigma, &mut local);
                    segments.push(ActionSegment::new(x, st, st + seg.len()));
                    spans.push(ErrorSpan { st, ed: st + seg.len(), kind: "modification".into() });
                    executed.push(x);
                    continue;
                }
            }
            Some(Kind::Deviation) => {
                let dir = center_direction(cfg, &mut local);
                for row in src.features.view(seg.st..seg.ed).data().chunks(dim) {
                    values.extend(row.iter().zip(&dir).map(|(v, u)| v + cfg.deviation_margin * u));
                }
                segments.push(ActionSegment::new(class, st, st + seg.len()));
                spans.push(ErrorSpan { st, ed: st + seg.len(), kind: "deviation".into() });
                executed.push(class);
                continue;
            }
            _ => {}
        }
        values.extend_from_slice(src.features.view(seg.st..seg.ed).data());
        segments.push(ActionSegment::new(class, st, st + seg.len()));
        if let Some(kind) = copy_kind.take() {
            spans.push(ErrorSpan { st, ed: st + seg.len(), kind: kind.into() });
        }
        executed.push(class);
    }
    let frames = values.len() / dim;
    let record = VideoRecord {
        id: src.id.clone(),
        features: FeatureMatrix::from_flat(frames, dim, values)?,
        frame_labels: Some(frame_labels(&segments, frames)),
        segments,
        error_spans: spans,
    };
    Ok(SynthVideo { pred: record.segments.clone(), record, drift: video.drift.clone() })
}

/// Noisy copy of `segments`: action labels are replaced with probability
/// `mislabel` and boundaries between touching segments move by up to
/// `jitter` frames, never emptying a segment.
pub fn asm_segments(
    segments: &[ActionSegment],
    n_classes: usize,
    noise: &AsmNoise,
    rng: &mut impl Rng,
) -> Vec<ActionSegment> {
    let mut out = segments.to_vec();
    for seg in &mut out {
        if let Some(c) = seg.label.action() {
            if n_classes > 1 && rng.random_bool(noise.mislabel) {
                let mut other = rng.random_range(0..n_classes as ClassId - 1);
                if other >= c {
                    other += 1;
                }
                seg.label = Label::Action(other);
            }
        }
    }
    if noise.jitter > 0 {
        for k in 1..out.len() {
            if out[k - 1].ed != out[k].st {
                continue;
            }
            let j = noise.jitter as i64;
            let shift = rng.random_range(-j..=j);
            let lo = out[k - 1].st as i64 + 1;
            let hi = out[k].ed as i64 - 1;
            let boundary = (out[k].st as i64 + shift).clamp(lo, hi) as usize;
            out[k - 1].ed = boundary;
            out[k].st = boundary;
        }
    }
    out
}

/// Generates video `index` of `split`; test videos receive errors. Each
/// video draws from its own random stream, so videos can be produced in any
/// order or in parallel.
pub fn generate_video(
    graph: &TaskGraph,
    centers: &[Vec<f64>],
    cfg: &SynthConfig,
    split: Split,
    index: usize,
) -> Result<SynthVideo> {
    let mut rng = stream_rng(cfg.seed, split.stream(index));
    let id = format!("{}_{index:04}", split.name());
    let mut video = generate_normal_video(graph, centers, cfg, id, &mut rng)?;
    if split == Split::Test {
        video = inject_errors(&video, graph, centers, cfg, &mut rng)?;
    }
    video.pred = asm_segments(&video.record.segments, cfg.n_classes, &cfg.asm, &mut rng);
    Ok(video)
}

/// Graph, centers and all splits. Only the test split contains errors.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    let graph = sample_graph(cfg)?;
    let centers = sample_centers(cfg)?;
    let split = |split: Split, n: usize| -> Result<Vec<SynthVideo>> {
        (0..n).map(|i| generate_video(&graph, &centers, cfg, split, i)).collect()
    };
    let train = split(Split::Train, cfg.train_videos)?;
    let calib = split(Split::Calib, cfg.calib_videos)?;
    let test = split(Split::Test, cfg.test_videos)?;
    Ok(SynthDataset { config: cfg.clone(), graph, centers, train, calib, test })
}
