//! Matching reconstructed normal representations against observed action
//! features, per-class threshold calibration and the per-video detector.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{action_feature, ActionSegment, VideoRecord};
use crate::graph::TaskGraph;
use crate::math::{ceil, distance};
use crate::papb::valid_next_actions;
use crate::rrb::{NormalSet, RrbModel};
use crate::{ClassId, Error, Result};

/// Default calibration quantile.
pub const DEFAULT_QUANTILE: f64 = 0.85;

/// Minimum Euclidean distance from `f_action` to the normal set and the
/// candidate attaining it (ties go to the smallest class id).
pub fn match_candidates(f_action: &[f64], normals: &NormalSet) -> Result<(f64, ClassId)> {
    normals
        .candidates
        .iter()
        .zip(&normals.representations)
        .map(|(&c, rep)| (distance(f_action, rep), c))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .ok_or(Error::NoCandidates)
}

/// Nearest-rank quantile: the value at 1-based rank `ceil(q * n)` of the
/// sorted data. Returns `None` for empty input.
pub fn nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (ceil(q * n as f64) as usize).clamp(1, n);
    Some(sorted[rank - 1])
}

/// Per-class error thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub q: f64,
    pub thresholds: BTreeMap<ClassId, f64>,
    #[serde(default)]
    pub counts: BTreeMap<ClassId, usize>,
    /// Quantile over the pooled distances of every class.
    #[serde(default)]
    pub global: Option<f64>,
}

impl ThresholdTable {
    pub fn get(&self, class: ClassId) -> Option<f64> {
        self.thresholds.get(&class).copied()
    }
}

/// Computes `θ(y)` as the nearest-rank `q`-quantile of each class's distances.
/// Classes with no distances are left out.
pub fn calibrate(distances: &BTreeMap<ClassId, Vec<f64>>, q: f64) -> Result<ThresholdTable> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(alloc::format!("quantile {q} is outside (0, 1)")));
    }
    let mut thresholds = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut pooled = Vec::new();
    for (&class, ds) in distances {
        if let Some(pos) = ds.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Config(alloc::format!(
                "class {class}: calibration distance {} is not a finite non-negative number",
                ds[pos]
            )));
        }
        match nearest_rank(ds, q) {
            Some(theta) => {
                thresholds.insert(class, theta);
                counts.insert(class, ds.len());
                pooled.extend_from_slice(ds);
            }
            None => log::warn!("class {class} has no calibration distances; no threshold"),
        }
    }
    let global = nearest_rank(&pooled, q);
    Ok(ThresholdTable { q, thresholds, counts, global })
}

/// Error decision: strictly greater than the threshold.
pub fn flag(d_min: f64, theta: f64) -> bool {
    d_min > theta
}

/// Error score used for ROC analysis: `d_min / θ`.
pub fn score(d_min: f64, theta: f64) -> f64 {
    d_min / theta.max(f64::MIN_POSITIVE)
}

/// What to do when a segment's class has no calibrated threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingThresholdPolicy {
    #[default]
    Error,
    /// Use the quantile of the pooled calibration distances.
    GlobalQuantile,
}

/// How the candidate set is formed for each segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    /// Every valid next action.
    #[default]
    All,
    /// One valid next action drawn at random (ablation).
    SingleRandom { seed: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectOptions {
    pub missing_threshold: MissingThresholdPolicy,
    pub candidates: CandidateMode,
}

/// Detection result for one action segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentVerdict {
    pub segment: ActionSegment,
    pub d_min: f64,
    pub matched: ClassId,
    pub candidates: Vec<ClassId>,
    pub is_error: bool,
    pub score: f64,
}

/// Distance of one segment to its nearest reconstructed normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatch {
    pub segment: ActionSegment,
    pub class: ClassId,
    pub d_min: f64,
    pub matched: ClassId,
    pub candidates: Vec<ClassId>,
}

/// Matches every action segment of `video` against the normals predicted
/// from its history. Background segments are skipped but their frames stay
/// in the context of later segments.
pub fn match_video(
    video: &VideoRecord,
    model: &RrbModel,
    graph: &TaskGraph,
    mode: CandidateMode,
) -> Result<Vec<SegmentMatch>> {
    let mut rng = match mode {
        CandidateMode::All => None,
        CandidateMode::SingleRandom { seed } => Some(ChaCha8Rng::seed_from_u64(seed ^ fnv1a(video.id.as_bytes()))),
    };
    let mut executed: Vec<ClassId> = Vec::new();
    let mut context_end = 0;
    let mut out = Vec::new();
    for seg in &video.segments {
        if let Some(class) = seg.label.action() {
            let mut candidates: Vec<ClassId> = valid_next_actions(graph, &executed).into_iter().collect();
            if candidates.is_empty() {
                log::debug!("video {}: no valid next action at [{}, {}), using all classes", video.id, seg.st, seg.ed);
                candidates = model.centers.classes().collect();
            }
            if let Some(rng) = rng.as_mut() {
                let pick = *candidates.choose(rng).ok_or(Error::NoCandidates)?;
                candidates = alloc::vec![pick];
            }
            let normals = model.reconstruct(&candidates, video.features.view(0..context_end))?;
            let f_action = action_feature(&video.features, seg)?;
            let (d_min, matched) = match_candidates(&f_action, &normals)?;
            out.push(SegmentMatch { segment: *seg, class, d_min, matched, candidates });
            executed.push(class);
        }
        context_end = seg.ed;
    }
    Ok(out)
}

/// Runs the detector over one video, one verdict per action segment.
pub fn detect_video(
    video: &VideoRecord,
    model: &RrbModel,
    graph: &TaskGraph,
    thresholds: &ThresholdTable,
    opts: &DetectOptions,
) -> Result<Vec<SegmentVerdict>> {
    match_video(video, model, graph, opts.candidates)?
        .into_iter()
        .map(|m| {
            let theta = match (thresholds.get(m.class), opts.missing_threshold) {
                (Some(t), _) => t,
                (None, MissingThresholdPolicy::GlobalQuantile) => {
                    thresholds.global.ok_or(Error::MissingThreshold(m.class))?
                }
                (None, MissingThresholdPolicy::Error) => return Err(Error::MissingThreshold(m.class)),
            };
            Ok(SegmentVerdict {
                segment: m.segment,
                d_min: m.d_min,
                matched: m.matched,
                candidates: m.candidates,
                is_error: flag(m.d_min, theta),
                score: score(m.d_min, theta),
            })
        })
        .collect()
}

/// Minimum distances of normal videos grouped by segment class, ready for
/// [`calibrate`].
pub fn calibration_distances<'a, I>(
    videos: I,
    model: &RrbModel,
    graph: &TaskGraph,
) -> Result<BTreeMap<ClassId, Vec<f64>>>
where
    I: IntoIterator<Item = &'a VideoRecord>,
{
    let mut out: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for video in videos {
        for m in match_video(video, model, graph, CandidateMode::All)? {
            out.entry(m.class).or_default().push(m.d_min);
        }
    }
    Ok(out)
}

/// Merges per-video calibration distances in iteration order.
pub fn merge_distances<I>(parts: I) -> BTreeMap<ClassId, Vec<f64>>
where
    I: IntoIterator<Item = BTreeMap<ClassId, Vec<f64>>>,
{
    let mut out: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for part in parts {
        for (class, ds) in part {
            out.entry(class).or_default().extend(ds);
        }
    }
    out
}

/// Classes with a center but no threshold.
pub fn uncalibrated_classes(model: &RrbModel, thresholds: &ThresholdTable) -> BTreeSet<ClassId> {
    model.centers.classes().filter(|c| !thresholds.thresholds.contains_key(c)).collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
