//! Error-detection metrics: segment-level EDA, ROC-AUC and frame accuracy on
//! non-deterministic actions.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{ActionSegment, ErrorSpan};
use crate::detector::SegmentVerdict;
use crate::graph::TaskGraph;
use crate::{Error, Result};

/// Knobs for turning annotations into segment ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// A segment is erroneous when more than this fraction of its frames lies
    /// inside error spans.
    pub overlap_threshold: f64,
    /// Report balanced accuracy as `eda` (otherwise plain accuracy).
    pub balanced: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { overlap_threshold: 0.5, balanced: true }
    }
}

/// Whether `seg` counts as erroneous given the annotated spans.
pub fn segment_is_erroneous(seg: &ActionSegment, spans: &[ErrorSpan], overlap_threshold: f64) -> bool {
    if seg.is_empty() {
        return false;
    }
    let covered: usize = spans.iter().map(|s| seg.intersection(s.st, s.ed)).sum();
    covered as f64 / seg.len() as f64 > overlap_threshold
}

/// Segment counts by (truth, prediction).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub false_positive: usize,
}

impl Confusion {
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (bool, bool)>,
    {
        let mut c = Self::default();
        for (truth, predicted) in pairs {
            match (truth, predicted) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_negative += 1,
                (false, false) => c.true_negative += 1,
                (false, true) => c.false_positive += 1,
            }
        }
        c
    }

    pub fn errors(&self) -> usize {
        self.true_positive + self.false_negative
    }

    pub fn normals(&self) -> usize {
        self.true_negative + self.false_positive
    }

    pub fn total(&self) -> usize {
        self.errors() + self.normals()
    }

    /// Mean of the recalls on erroneous and on normal segments; the recall of
    /// the only class present when the other is absent.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        let recall = |hit: usize, n: usize| (n > 0).then(|| hit as f64 / n as f64);
        match (recall(self.true_positive, self.errors()), recall(self.true_negative, self.normals())) {
            (Some(a), Some(b)) => Ok(0.5 * (a + b)),
            (Some(a), None) | (None, Some(a)) => Ok(a),
            (None, None) => Err(Error::UndefinedMetric("no segments")),
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::UndefinedMetric("no segments"));
        }
        Ok((self.true_positive + self.true_negative) as f64 / self.total() as f64)
    }
}

/// Balanced segment accuracy of `predicted` against `truth`.
pub fn eda(predicted: &[bool], truth: &[bool]) -> Result<f64> {
    check_aligned(predicted.len(), truth.len())?;
    Confusion::from_pairs(truth.iter().copied().zip(predicted.iter().copied())).balanced_accuracy()
}

/// Plain segment accuracy of `predicted` against `truth`.
pub fn eda_plain(predicted: &[bool], truth: &[bool]) -> Result<f64> {
    check_aligned(predicted.len(), truth.len())?;
    Confusion::from_pairs(truth.iter().copied().zip(predicted.iter().copied())).accuracy()
}

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score"));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u128;
    let negatives = labels.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the Mann-Whitney U statistic, kept integral so ties are exact.
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (pos, neg) =
            order[i..j].iter().fold((0u128, 0u128), |(p, n), &k| if labels[k] { (p + 1, n) } else { (p, n + 1) });
        twice_u += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// Frame-level accuracy of the error decisions restricted to segments whose
/// label is a non-deterministic node of `graph`. A frame is truly erroneous
/// when it lies inside an error span.
pub fn nondet_frame_accuracy(verdicts: &[SegmentVerdict], spans: &[ErrorSpan], graph: &TaskGraph) -> Result<f64> {
    let (correct, total) = nondet_frame_counts(verdicts, spans, graph);
    if total == 0 {
        return Err(Error::UndefinedMetric("no frames of non-deterministic actions"));
    }
    Ok(correct as f64 / total as f64)
}

fn nondet_frame_counts(verdicts: &[SegmentVerdict], spans: &[ErrorSpan], graph: &TaskGraph) -> (usize, usize) {
    let nondet = graph.non_deterministic_nodes();
    let (mut correct, mut total) = (0, 0);
    for v in verdicts {
        let Some(class) = v.segment.label.action() else { continue };
        if !nondet.contains(&class) {
            continue;
        }
        for frame in v.segment.st..v.segment.ed {
            let truth = spans.iter().any(|s| (s.st..s.ed).contains(&frame));
            correct += usize::from(truth == v.is_error);
            total += 1;
        }
    }
    (correct, total)
}

/// One video's detector output together with its annotations.
#[derive(Debug, Clone, Copy)]
pub struct VideoVerdicts<'a> {
    pub id: &'a str,
    pub verdicts: &'a [SegmentVerdict],
    pub error_spans: &'a [ErrorSpan],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub id: String,
    pub confusion: Confusion,
    pub eda: Option<f64>,
}

/// Aggregate scores; metrics that are undefined on the input are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eda: Option<f64>,
    pub eda_balanced: Option<f64>,
    pub eda_plain: Option<f64>,
    pub auc: Option<f64>,
    pub nondet_frame_acc: Option<f64>,
    pub error_segments: usize,
    pub normal_segments: usize,
    pub confusion: Confusion,
    pub options: EvalOptions,
    pub per_video: Vec<VideoEval>,
}

/// Scores a set of videos. Results do not depend on video order.
pub fn evaluate(videos: &[VideoVerdicts<'_>], graph: Option<&TaskGraph>, opts: &EvalOptions) -> EvalReport {
    let mut all = Confusion::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let (mut nd_correct, mut nd_total) = (0, 0);
    let mut per_video = Vec::with_capacity(videos.len());
    for v in videos {
        let pairs: Vec<(bool, bool)> = v
            .verdicts
            .iter()
            .map(|x| (segment_is_erroneous(&x.segment, v.error_spans, opts.overlap_threshold), x.is_error))
            .collect();
        let confusion = Confusion::from_pairs(pairs.iter().copied());
        for (x, &(truth, _)) in v.verdicts.iter().zip(&pairs) {
            scores.push(x.score);
            labels.push(truth);
        }
        all.true_positive += confusion.true_positive;
        all.false_negative += confusion.false_negative;
        all.true_negative += confusion.true_negative;
        all.false_positive += confusion.false_positive;
        if let Some(g) = graph {
            let (c, t) = nondet_frame_counts(v.verdicts, v.error_spans, g);
            nd_correct += c;
            nd_total += t;
        }
        let eda = pick(&confusion, opts.balanced);
        per_video.push(VideoEval { id: String::from(v.id), confusion, eda });
    }
    per_video.sort_by(|a, b| a.id.cmp(&b.id));
    EvalReport {
        eda: pick(&all, opts.balanced),
        eda_balanced: all.balanced_accuracy().ok(),
        eda_plain: all.accuracy().ok(),
        auc: roc_auc(&scores, &labels).ok(),
        nondet_frame_acc: (nd_total > 0).then(|| nd_correct as f64 / nd_total as f64),
        error_segments: all.errors(),
        normal_segments: all.normals(),
        confusion: all,
        options: *opts,
        per_video,
    }
}

fn pick(c: &Confusion, balanced: bool) -> Option<f64> {
    if balanced { c.balanced_accuracy() } else { c.accuracy() }.ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn eda_examples() {
        let truth = [true, true, true, true, false, false];
        assert_eq!(eda(&truth, &truth), Ok(1.0));
        assert_eq!(eda(&[false; 6], &truth), Ok(0.5));
        let predicted = [true, true, true, false, true, false];
        assert_eq!(eda(&predicted, &truth), Ok(0.625));
        assert_eq!(eda_plain(&predicted, &truth), Ok(4.0 / 6.0));
        assert_eq!(eda(&[true, false], &[true, true]), Ok(0.5));
        assert!(eda(&[], &[]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Ok(0.75));
        assert_eq!(roc_auc(&[0.1, 0.2, 0.9], &[false, false, true]), Ok(1.0));
        assert_eq!(roc_auc(&[3.0; 5], &[true, false, true, false, false]), Ok(0.5));
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn erroneous_segment_rule() {
        let seg = ActionSegment::new(1u32, 0, 10);
        let span = |st, ed| ErrorSpan { st, ed, kind: "deviation".into() };
        assert!(!segment_is_erroneous(&seg, &[span(0, 5)], 0.5));
        assert!(segment_is_erroneous(&seg, &[span(0, 6)], 0.5));
        assert!(segment_is_erroneous(&seg, &[span(0, 3), span(7, 12)], 0.5));
    }

    fn verdict(label: u32, st: usize, ed: usize, is_error: bool) -> SegmentVerdict {
        SegmentVerdict {
            segment: ActionSegment::new(label, st, ed),
            d_min: 0.0,
            matched: label,
            candidates: vec![label],
            is_error,
            score: if is_error { 2.0 } else { 0.5 },
        }
    }

    #[test]
    fn nondet_examples() {
        let chain = TaskGraph::from_edges(3, [(3, 0), (0, 1), (1, 2)]).unwrap();
        let vs = [verdict(0, 0, 5, false), verdict(1, 5, 10, false)];
        assert!(nondet_frame_accuracy(&vs, &[], &chain).is_err());

        // 1 and 2 are non-deterministic; 30 of 40 of their frames judged right
        let fork = TaskGraph::from_edges(3, [(3, 0), (0, 1), (0, 2)]).unwrap();
        let vs = [verdict(0, 0, 10, true), verdict(1, 10, 30, false), verdict(2, 30, 50, true)];
        let spans = [ErrorSpan { st: 30, ed: 40, kind: "deviation".into() }];
        assert_eq!(nondet_frame_accuracy(&vs, &spans, &fork), Ok(0.75));
    }

    #[test]
    fn report_on_perfect_verdicts() {
        let vs = [verdict(0, 0, 10, false), verdict(1, 10, 20, true)];
        let spans = [ErrorSpan { st: 10, ed: 20, kind: "addition".into() }];
        let r =
            evaluate(&[VideoVerdicts { id: "a", verdicts: &vs, error_spans: &spans }], None, &EvalOptions::default());
        assert_eq!(r.eda, Some(1.0));
        assert_eq!(r.auc, Some(1.0));
        assert_eq!((r.error_segments, r.normal_segments), (1, 1));
        assert_eq!(r.nondet_frame_acc, None);
    }
}
