//! Line-delimited JSON records: segments, frame labels, error annotations,
//! training-sample specs and detector verdicts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use amnar_core::dataset::{ActionSegment, ErrorSpan, Label, SampleSpec, SegmentSource};
use amnar_core::detector::SegmentVerdict;
use amnar_core::ClassId;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub video: String,
    pub label: Label,
    pub st: usize,
    pub ed: usize,
    pub source: SegmentSource,
}

impl SegmentRecord {
    pub fn new(video: &str, seg: &ActionSegment, source: SegmentSource) -> Self {
        Self { video: video.to_owned(), label: seg.label, st: seg.st, ed: seg.ed, source }
    }

    pub fn segment(&self) -> ActionSegment {
        ActionSegment { label: self.label, st: self.st, ed: self.ed }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLabelsRecord {
    pub video: String,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorRecord {
    pub video: String,
    pub st: usize,
    pub ed: usize,
    pub kind: String,
}

impl ErrorRecord {
    pub fn new(video: &str, span: &ErrorSpan) -> Self {
        Self { video: video.to_owned(), st: span.st, ed: span.ed, kind: span.kind.clone() }
    }

    pub fn span(&self) -> ErrorSpan {
        ErrorSpan { st: self.st, ed: self.ed, kind: self.kind.clone() }
    }
}

/// A curated training sample: target segment `[st, ed)` of `class` with
/// context frames `[0, ctx_end)` of `video`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub video: String,
    pub ctx_end: usize,
    pub class: ClassId,
    pub st: usize,
    pub ed: usize,
    pub source: SegmentSource,
}

impl SampleRecord {
    pub fn new(video: &str, spec: &SampleSpec) -> Self {
        Self {
            video: video.to_owned(),
            ctx_end: spec.ctx_end,
            class: spec.class,
            st: spec.st,
            ed: spec.ed,
            source: spec.source,
        }
    }

    pub fn spec(&self) -> SampleSpec {
        SampleSpec { ctx_end: self.ctx_end, class: self.class, st: self.st, ed: self.ed, source: self.source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub video: String,
    pub st: usize,
    pub ed: usize,
    pub label: Label,
    pub d_min: f64,
    pub matched: ClassId,
    pub is_error: bool,
    pub score: f64,
}

impl VerdictRecord {
    pub fn new(video: &str, v: &SegmentVerdict) -> Self {
        Self {
            video: video.to_owned(),
            st: v.segment.st,
            ed: v.segment.ed,
            label: v.segment.label,
            d_min: v.d_min,
            matched: v.matched,
            is_error: v.is_error,
            score: v.score,
        }
    }

    /// The verdict without its candidate list, which the file does not keep.
    pub fn verdict(&self) -> SegmentVerdict {
        SegmentVerdict {
            segment: ActionSegment { label: self.label, st: self.st, ed: self.ed },
            d_min: self.d_min,
            matched: self.matched,
            candidates: Vec::new(),
            is_error: self.is_error,
            score: self.score,
        }
    }
}

/// Parses one record per non-blank line; errors carry the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::invalid(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_record_layout() {
        let seg = ActionSegment::new(3, 4, 9);
        let json = serde_json::to_string(&SegmentRecord::new("v1", &seg, SegmentSource::Pred)).unwrap();
        assert_eq!(json, r#"{"video":"v1","label":3,"st":4,"ed":9,"source":"pred"}"#);
        let bg = SegmentRecord { label: Label::Background, ..serde_json::from_str(&json).unwrap() };
        assert!(serde_json::to_string(&bg).unwrap().contains(r#""label":-1"#));
    }

    #[test]
    fn unknown_fields_and_labels_rejected() {
        assert!(serde_json::from_str::<ErrorRecord>(r#"{"video":"a","st":0,"ed":1,"kind":"x","extra":1}"#).is_err());
        assert!(serde_json::from_str::<FrameLabelsRecord>(r#"{"video":"a","labels":[0,-2]}"#).is_err());
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "{\"video\":\"a\",\"st\":0,\"ed\":1,\"kind\":\"x\"}\n\n{\"video\":1}\n").unwrap();
        match read_jsonl::<ErrorRecord>(&path) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
