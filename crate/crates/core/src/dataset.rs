//! Data model and training-sample curation.
//!
//! Segments are half-open frame ranges `[st, ed)`. All feature arithmetic is
//! carried out in `f64`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{ClassId, Error, Result};

/// Row-major `frames × dim` matrix of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn empty(dim: usize) -> Self {
        Self { frames: 0, dim, values: Vec::new() }
    }

    /// Builds a matrix from a flat row-major buffer, rejecting non-finite values.
    pub fn from_flat(frames: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be at least 1".into()));
        }
        if values.len() != frames * dim {
            return Err(Error::DimensionMismatch { expected: frames * dim, found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i / dim, col: i % dim });
        }
        Ok(Self { frames, dim, values })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(rows.len(), dim, values)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Borrowed view over a contiguous range of frames.
    pub fn view(&self, frames: Range<usize>) -> Frames<'_> {
        Frames { dim: self.dim, data: &self.values[frames.start * self.dim..frames.end * self.dim] }
    }

    pub fn as_frames(&self) -> Frames<'_> {
        self.view(0..self.frames)
    }

    /// Appends the frames of `other`; dimensions must agree.
    pub fn extend(&mut self, other: Frames<'_>) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        self.values.extend_from_slice(other.data);
        self.frames += other.len();
        Ok(())
    }
}

/// Borrowed row-major block of frames.
#[derive(Debug, Clone, Copy)]
pub struct Frames<'a> {
    dim: usize,
    data: &'a [f64],
}

impl<'a> Frames<'a> {
    pub fn new(dim: usize, data: &'a [f64]) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "frame buffer is not a multiple of dim");
        Self { dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The last `n` frames (all of them when fewer are available).
    pub fn tail(&self, n: usize) -> Frames<'a> {
        let len = self.len();
        let start = len.saturating_sub(n);
        Frames { dim: self.dim, data: &self.data[start * self.dim..] }
    }

    pub fn to_matrix(&self) -> FeatureMatrix {
        FeatureMatrix { frames: self.len(), dim: self.dim, values: self.data.to_vec() }
    }
}

/// Segment label: an action class or background.
///
/// Serialized as an integer, with background encoded as `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Background,
    Action(ClassId),
}

impl Label {
    pub const BACKGROUND_CODE: i64 = -1;

    pub fn action(self) -> Option<ClassId> {
        match self {
            Label::Action(c) => Some(c),
            Label::Background => None,
        }
    }

    pub fn is_background(self) -> bool {
        matches!(self, Label::Background)
    }

    pub fn code(self) -> i64 {
        match self {
            Label::Background => Self::BACKGROUND_CODE,
            Label::Action(c) => i64::from(c),
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            Self::BACKGROUND_CODE => Some(Label::Background),
            c => ClassId::try_from(c).ok().map(Label::Action),
        }
    }
}

impl From<ClassId> for Label {
    fn from(c: ClassId) -> Self {
        Label::Action(c)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_i64(self.code())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let code = i64::deserialize(d)?;
        Label::from_code(code).ok_or_else(|| serde::de::Error::custom(alloc::format!("invalid label {code}")))
    }
}

/// Labeled half-open frame interval `[st, ed)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub label: Label,
    pub st: usize,
    pub ed: usize,
}

impl ActionSegment {
    pub fn new(label: impl Into<Label>, st: usize, ed: usize) -> Self {
        Self { label: label.into(), st, ed }
    }

    pub fn len(&self) -> usize {
        self.ed.saturating_sub(self.st)
    }

    pub fn is_empty(&self) -> bool {
        self.ed <= self.st
    }

    pub fn intersection(&self, st: usize, ed: usize) -> usize {
        self.ed.min(ed).saturating_sub(self.st.max(st))
    }

    fn check_bounds(&self, frames: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptySegment { st: self.st, ed: self.ed });
        }
        if self.ed > frames {
            return Err(Error::SegmentOutOfBounds { st: self.st, ed: self.ed, frames });
        }
        Ok(())
    }
}

/// Annotated error interval `[st, ed)` with its kind (e.g. `"deviation"`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSpan {
    pub st: usize,
    pub ed: usize,
    pub kind: String,
}

/// One recording: frame features, ordered segments and optional annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureMatrix,
    pub segments: Vec<ActionSegment>,
    pub frame_labels: Option<Vec<Label>>,
    pub error_spans: Vec<ErrorSpan>,
}

impl VideoRecord {
    /// Checks segment ordering/bounds, label range and frame-label length.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let frames = self.features.frames();
        let mut prev_ed = 0;
        for seg in &self.segments {
            seg.check_bounds(frames)?;
            if seg.st < prev_ed {
                return Err(Error::Config(alloc::format!(
                    "video {}: segment [{}, {}) overlaps or precedes the previous one",
                    self.id,
                    seg.st,
                    seg.ed
                )));
            }
            check_label(seg.label, num_classes)?;
            prev_ed = seg.ed;
        }
        if let Some(labels) = &self.frame_labels {
            if labels.len() != frames {
                return Err(Error::DimensionMismatch { expected: frames, found: labels.len() });
            }
            for &l in labels {
                check_label(l, num_classes)?;
            }
        }
        Ok(())
    }

    /// Non-background labels of the segments, in order.
    pub fn action_sequence(&self) -> Vec<ClassId> {
        self.segments.iter().filter_map(|s| s.label.action()).collect()
    }
}

fn check_label(label: Label, num_classes: usize) -> Result<()> {
    match label {
        Label::Action(c) if c as usize >= num_classes => Err(Error::InvalidNode { node: c, nodes: num_classes }),
        _ => Ok(()),
    }
}

/// Per-class mean action features and the number of samples behind each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterCenters {
    pub centers: BTreeMap<ClassId, Vec<f64>>,
    pub counts: BTreeMap<ClassId, usize>,
}

impl ClusterCenters {
    pub fn get(&self, class: ClassId) -> Option<&[f64]> {
        self.centers.get(&class).map(Vec::as_slice)
    }

    pub fn require(&self, class: ClassId) -> Result<&[f64]> {
        self.get(class).ok_or(Error::MissingCenter(class))
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.centers.keys().copied()
    }

    pub fn dim(&self) -> Option<usize> {
        self.centers.values().next().map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Context frames preceding a segment plus the segment's class and mean feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub context: FeatureMatrix,
    pub target_class: ClassId,
    pub target_feature: Vec<f64>,
}

/// Where a curated sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentSource {
    Gt,
    Pred,
}

/// A training sample described by frame indices into its video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub ctx_end: usize,
    pub class: ClassId,
    pub st: usize,
    pub ed: usize,
    pub source: SegmentSource,
}

impl SampleSpec {
    pub fn materialize(&self, features: &FeatureMatrix) -> Result<TrainingSample> {
        let seg = ActionSegment::new(self.class, self.st, self.ed);
        let target_feature = action_feature(features, &seg)?;
        if self.ctx_end > features.frames() {
            return Err(Error::SegmentOutOfBounds { st: 0, ed: self.ctx_end, frames: features.frames() });
        }
        Ok(TrainingSample {
            context: features.view(0..self.ctx_end).to_matrix(),
            target_class: self.class,
            target_feature,
        })
    }
}

/// Which segment streams feed the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleStrategy {
    GtOnly,
    PredOnly,
    #[default]
    Hybrid,
}

/// Mean of the feature rows `st..ed`.
pub fn action_feature(features: &FeatureMatrix, seg: &ActionSegment) -> Result<Vec<f64>> {
    seg.check_bounds(features.frames())?;
    let mut mean = alloc::vec![0.0; features.dim()];
    for i in seg.st..seg.ed {
        for (m, v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    let n = seg.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Fraction of `pred` covered by the ground-truth segment it intersects most
/// (earliest on ties). Zero for an empty `pred` or empty `gts`.
pub fn overlap_ratio(pred: &ActionSegment, gts: &[ActionSegment]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let best = gts.iter().map(|g| pred.intersection(g.st, g.ed)).fold(0usize, usize::max);
    best as f64 / pred.len() as f64
}

/// Keeps the predicted segments whose overlap ratio is at least `tau`, in order.
pub fn filter_segments(preds: &[ActionSegment], gts: &[ActionSegment], tau: f64) -> Vec<ActionSegment> {
    preds.iter().filter(|p| overlap_ratio(p, gts) >= tau).copied().collect()
}

/// Most frequent frame label inside `seg`; ties go to the smallest label
/// (background sorts first).
pub fn majority_label(seg: &ActionSegment, frame_labels: &[Label]) -> Result<Label> {
    seg.check_bounds(frame_labels.len())?;
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for &l in &frame_labels[seg.st..seg.ed] {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in ascending order, so the first maximum wins ties.
    let mut best = (Label::Background, 0usize);
    for (label, count) in counts {
        if count > best.1 {
            best = (label, count);
        }
    }
    Ok(best.0)
}

/// Per-class arithmetic mean of the given features.
pub fn cluster_centers<'a, I>(samples: I) -> ClusterCenters
where
    I: IntoIterator<Item = (ClassId, &'a [f64])>,
{
    let mut sums: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for (class, feature) in samples {
        let sum = sums.entry(class).or_insert_with(|| alloc::vec![0.0; feature.len()]);
        for (s, v) in sum.iter_mut().zip(feature) {
            *s += v;
        }
        *counts.entry(class).or_default() += 1;
    }
    for (class, sum) in sums.iter_mut() {
        let n = counts[class] as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    ClusterCenters { centers: sums, counts }
}

/// Builds training-sample specs for one video.
///
/// Ground-truth action segments are used as-is. Predicted segments are kept
/// when their overlap ratio with the ground truth reaches `tau` and are then
/// relabeled with the majority ground-truth frame label. Background targets
/// and targets without preceding context are dropped.
pub fn curate_samples(
    gt: &[ActionSegment],
    pred: &[ActionSegment],
    frame_labels: Option<&[Label]>,
    tau: f64,
    strategy: SampleStrategy,
) -> Result<Vec<SampleSpec>> {
    let mut out = Vec::new();
    if matches!(strategy, SampleStrategy::GtOnly | SampleStrategy::Hybrid) {
        let mut ctx_end = 0;
        for seg in gt {
            if let Some(class) = seg.label.action() {
                if ctx_end > 0 && !seg.is_empty() {
                    out.push(SampleSpec { ctx_end, class, st: seg.st, ed: seg.ed, source: SegmentSource::Gt });
                }
            }
            ctx_end = seg.ed;
        }
    }
    if matches!(strategy, SampleStrategy::PredOnly | SampleStrategy::Hybrid) {
        let labels = frame_labels.ok_or_else(|| Error::Config("predicted-segment samples need frame labels".into()))?;
        let mut ctx_end = 0;
        for seg in pred {
            if !seg.is_empty() && ctx_end > 0 && overlap_ratio(seg, gt) >= tau {
                if let Label::Action(class) = majority_label(seg, labels)? {
                    out.push(SampleSpec { ctx_end, class, st: seg.st, ed: seg.ed, source: SegmentSource::Pred });
                }
            }
            ctx_end = seg.ed;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn seg(l: ClassId, st: usize, ed: usize) -> ActionSegment {
        ActionSegment::new(l, st, ed)
    }

    #[test]
    fn action_feature_means() {
        let m = FeatureMatrix::from_rows(1, &[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(action_feature(&m, &seg(0, 0, 2)).unwrap(), vec![2.0]);
        let c = FeatureMatrix::from_rows(2, &vec![vec![0.5, -1.0]; 4]).unwrap();
        assert_eq!(action_feature(&c, &seg(0, 1, 4)).unwrap(), vec![0.5, -1.0]);
    }

    #[test]
    fn action_feature_rejects_empty_and_oob() {
        let m = FeatureMatrix::from_rows(1, &[vec![1.0]]).unwrap();
        assert_eq!(action_feature(&m, &seg(0, 0, 0)), Err(Error::EmptySegment { st: 0, ed: 0 }));
        assert!(matches!(action_feature(&m, &seg(0, 0, 2)), Err(Error::SegmentOutOfBounds { .. })));
    }

    #[test]
    fn non_finite_values_rejected() {
        let err = FeatureMatrix::from_flat(2, 2, vec![0.0, 1.0, f64::NAN, 2.0]).unwrap_err();
        assert_eq!(err, Error::NonFinite { row: 1, col: 0 });
    }

    #[test]
    fn overlap_cases() {
        let p = seg(1, 0, 10);
        assert_eq!(overlap_ratio(&p, &[p]), 1.0);
        assert_eq!(overlap_ratio(&p, &[seg(1, 10, 20)]), 0.0);
        assert_eq!(overlap_ratio(&p, &[seg(1, 5, 15)]), 0.5);
        assert_eq!(overlap_ratio(&p, &[]), 0.0);
        // closest = largest intersection, not first
        assert_eq!(overlap_ratio(&p, &[seg(1, 8, 12), seg(2, 0, 7)]), 0.7);
    }

    #[test]
    fn filter_threshold() {
        let gts = [seg(1, 0, 10)];
        let a = seg(1, 5, 15); // 0.5
        let b = seg(1, 3, 13); // 0.7
        assert_eq!(filter_segments(&[a, b], &gts, 0.6), vec![b]);
        assert_eq!(filter_segments(&[a, b], &gts, 0.0), vec![a, b]);
        assert_eq!(filter_segments(&gts, &gts, 1.0), gts.to_vec());
    }

    #[test]
    fn majority_with_ties() {
        let l = |c| Label::Action(c);
        let labels = vec![l(3); 6];
        assert_eq!(majority_label(&seg(0, 0, 6), &labels).unwrap(), l(3));
        let mut mixed = vec![l(7); 3];
        mixed.extend(vec![l(2); 5]);
        assert_eq!(majority_label(&seg(0, 0, 8), &mixed).unwrap(), l(2));
        let mut tie = vec![l(2); 4];
        tie.extend(vec![l(1); 4]);
        assert_eq!(majority_label(&seg(0, 0, 8), &tie).unwrap(), l(1));
        assert!(majority_label(&seg(0, 2, 2), &tie).is_err());
    }

    #[test]
    fn centers_are_means() {
        let a = [0.0];
        let b = [2.0];
        let c = [5.0];
        let centers = cluster_centers([(1, &a[..]), (1, &b[..]), (4, &c[..])]);
        assert_eq!(centers.get(1).unwrap(), &[1.0]);
        assert_eq!(centers.get(4).unwrap(), &[5.0]);
        assert_eq!(centers.counts[&1], 2);
        assert!(centers.get(0).is_none());
    }

    #[test]
    fn label_codes() {
        assert_eq!(Label::from_code(-1), Some(Label::Background));
        assert_eq!(Label::from_code(4), Some(Label::Action(4)));
        assert_eq!(Label::from_code(-2), None);
        assert!(Label::Background < Label::Action(0));
    }

    #[test]
    fn curation_hybrid() {
        let bg = ActionSegment::new(Label::Background, 0, 4);
        let gt = [bg, seg(0, 4, 10), seg(1, 10, 16)];
        let mut labels = vec![Label::Background; 4];
        labels.extend(vec![Label::Action(0); 6]);
        labels.extend(vec![Label::Action(1); 6]);
        // the second predicted segment is mislabeled but well aligned
        let pred = [ActionSegment::new(Label::Background, 0, 5), seg(2, 5, 10), seg(1, 10, 13), seg(1, 13, 16)];
        let specs = curate_samples(&gt, &pred, Some(&labels), 0.6, SampleStrategy::Hybrid).unwrap();
        let gt_specs: Vec<_> = specs.iter().filter(|s| s.source == SegmentSource::Gt).collect();
        assert_eq!(gt_specs.len(), 2);
        assert_eq!((gt_specs[0].ctx_end, gt_specs[0].class), (4, 0));
        let pred_specs: Vec<_> = specs.iter().filter(|s| s.source == SegmentSource::Pred).collect();
        assert_eq!(pred_specs.len(), 3);
        assert_eq!((pred_specs[0].ctx_end, pred_specs[0].class), (5, 0));
        let gt_only = curate_samples(&gt, &pred, None, 0.6, SampleStrategy::GtOnly).unwrap();
        assert_eq!(gt_only.len(), 2);
        assert!(curate_samples(&gt, &pred, None, 0.6, SampleStrategy::PredOnly).is_err());
    }

    #[test]
    fn validate_catches_overlap_and_label_range() {
        let features = FeatureMatrix::from_rows(1, &vec![vec![0.0]; 6]).unwrap();
        let mut v = VideoRecord {
            id: "v".into(),
            features,
            segments: vec![seg(0, 0, 3), seg(1, 3, 6)],
            frame_labels: None,
            error_spans: vec![],
        };
        assert!(v.validate(2).is_ok());
        assert!(v.validate(1).is_err());
        v.segments[1].st = 2;
        assert!(v.validate(2).is_err());
    }
}
