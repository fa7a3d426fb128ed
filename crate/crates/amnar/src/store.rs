//! Dataset directories.
//!
//! A split directory holds `features/<video>.amnf` plus `segments.jsonl`
//! (ground-truth and predicted segments), `frame_labels.jsonl` and
//! `errors.jsonl`. An emitted synthetic dataset has `task_graph.json`,
//! `config.json` and one such directory per split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use amnar_core::dataset::{ActionSegment, SegmentSource, VideoRecord};
use amnar_core::graph::TaskGraph;
use amnar_core::synth::{Split, SynthConfig, SynthDataset, SynthVideo};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{load_features, save_features};
use crate::files::{load_graph, read_json, save_graph, write_json};
use crate::records::{read_jsonl, write_jsonl, ErrorRecord, FrameLabelsRecord, SegmentRecord};

pub const FEATURES_DIR: &str = "features";
pub const FEATURE_EXT: &str = "amnf";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const FRAME_LABELS_FILE: &str = "frame_labels.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const GRAPH_FILE: &str = "task_graph.json";
pub const CONFIG_FILE: &str = "config.json";

/// A video as stored on disk: the record carries the ground-truth segments,
/// `pred` the segmentation-model output.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredVideo {
    pub record: VideoRecord,
    pub pred: Vec<ActionSegment>,
}

impl StoredVideo {
    /// The record with its segments taken from `source`.
    pub fn with_segments(&self, source: SegmentSource) -> VideoRecord {
        match source {
            SegmentSource::Gt => self.record.clone(),
            SegmentSource::Pred => VideoRecord { segments: self.pred.clone(), ..self.record.clone() },
        }
    }
}

impl From<&SynthVideo> for StoredVideo {
    fn from(v: &SynthVideo) -> Self {
        Self { record: v.record.clone(), pred: v.pred.clone() }
    }
}

fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("{id}.{FEATURE_EXT}"))
}

fn check_id(dir: &Path, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(dir, format!("video id {id:?} is not a valid file name")))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `videos` in the given order. Feature files are written in
/// parallel; the JSONL files are sequential and ordered.
pub fn write_split(dir: &Path, videos: &[StoredVideo]) -> Result<()> {
    create_dir(&dir.join(FEATURES_DIR))?;
    for v in videos {
        check_id(dir, &v.record.id)?;
    }
    videos
        .par_iter()
        .map(|v| save_features(&feature_path(dir, &v.record.id), &v.record.features))
        .collect::<Result<Vec<()>>>()?;

    let mut segments = Vec::new();
    let mut labels = Vec::new();
    let mut errors = Vec::new();
    for v in videos {
        let id = v.record.id.as_str();
        segments.extend(v.record.segments.iter().map(|s| SegmentRecord::new(id, s, SegmentSource::Gt)));
        segments.extend(v.pred.iter().map(|s| SegmentRecord::new(id, s, SegmentSource::Pred)));
        if let Some(l) = &v.record.frame_labels {
            labels.push(FrameLabelsRecord { video: id.to_owned(), labels: l.clone() });
        }
        errors.extend(v.record.error_spans.iter().map(|s| ErrorRecord::new(id, s)));
    }
    write_jsonl(&dir.join(SEGMENTS_FILE), &segments)?;
    write_jsonl(&dir.join(FRAME_LABELS_FILE), &labels)?;
    write_jsonl(&dir.join(ERRORS_FILE), &errors)
}

fn video_ids(dir: &Path) -> Result<Vec<String>> {
    let features = dir.join(FEATURES_DIR);
    let entries = std::fs::read_dir(&features).map_err(|e| Error::io(&features, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&features, e))?.path();
        if path.extension().is_some_and(|e| e == FEATURE_EXT) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

/// Loads every video that has a feature file, ordered by id. Segment, label
/// and error records must refer to those videos.
pub fn load_split(dir: &Path) -> Result<Vec<StoredVideo>> {
    let ids = video_ids(dir)?;
    let mut videos: BTreeMap<String, StoredVideo> = ids
        .par_iter()
        .map(|id| {
            let features = load_features(&feature_path(dir, id))?;
            let record = VideoRecord {
                id: id.clone(),
                features,
                segments: Vec::new(),
                frame_labels: None,
                error_spans: Vec::new(),
            };
            Ok((id.clone(), StoredVideo { record, pred: Vec::new() }))
        })
        .collect::<Result<_>>()?;

    let seg_path = dir.join(SEGMENTS_FILE);
    for (i, r) in read_jsonl::<SegmentRecord>(&seg_path)?.into_iter().enumerate() {
        let v = lookup(&mut videos, &seg_path, i, &r.video)?;
        match r.source {
            SegmentSource::Gt => v.record.segments.push(r.segment()),
            SegmentSource::Pred => v.pred.push(r.segment()),
        }
    }
    let labels_path = dir.join(FRAME_LABELS_FILE);
    for (i, r) in read_optional::<FrameLabelsRecord>(&labels_path)?.into_iter().enumerate() {
        let v = lookup(&mut videos, &labels_path, i, &r.video)?;
        if v.record.frame_labels.replace(r.labels).is_some() {
            return Err(Error::Record {
                path: labels_path,
                line: i + 1,
                message: format!("duplicate labels for {}", r.video),
            });
        }
    }
    let errors_path = dir.join(ERRORS_FILE);
    for (i, r) in read_optional::<ErrorRecord>(&errors_path)?.into_iter().enumerate() {
        lookup(&mut videos, &errors_path, i, &r.video)?.record.error_spans.push(r.span());
    }
    Ok(videos.into_values().collect())
}

fn lookup<'a>(
    videos: &'a mut BTreeMap<String, StoredVideo>,
    path: &Path,
    index: usize,
    id: &str,
) -> Result<&'a mut StoredVideo> {
    videos.get_mut(id).ok_or_else(|| Error::Record {
        path: path.to_path_buf(),
        line: index + 1,
        message: format!("video {id:?} has no feature file"),
    })
}

/// Checks every video against a class count, naming the split directory.
pub fn validate_split(dir: &Path, videos: &[StoredVideo], num_classes: usize) -> Result<()> {
    for v in videos {
        for record in [v.with_segments(SegmentSource::Gt), v.with_segments(SegmentSource::Pred)] {
            record.validate(num_classes).map_err(|e| Error::invalid(dir, format!("video {}: {e}", v.record.id)))?;
        }
    }
    Ok(())
}

/// The generated dataset as written to and read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub config: SynthConfig,
    pub graph: TaskGraph,
    pub train: Vec<StoredVideo>,
    pub calib: Vec<StoredVideo>,
    pub test: Vec<StoredVideo>,
}

impl From<&SynthDataset> for StoredDataset {
    fn from(d: &SynthDataset) -> Self {
        let stored = |vs: &[SynthVideo]| vs.iter().map(StoredVideo::from).collect();
        Self {
            config: d.config.clone(),
            graph: d.graph.clone(),
            train: stored(&d.train),
            calib: stored(&d.calib),
            test: stored(&d.test),
        }
    }
}

impl StoredDataset {
    pub fn split(&self, split: Split) -> &[StoredVideo] {
        match split {
            Split::Train => &self.train,
            Split::Calib => &self.calib,
            Split::Test => &self.test,
        }
    }
}

pub const SPLITS: [Split; 3] = [Split::Train, Split::Calib, Split::Test];

pub fn emit_dataset(data: &StoredDataset, out: &Path) -> Result<()> {
    create_dir(out)?;
    save_graph(&out.join(GRAPH_FILE), &data.graph)?;
    write_json(&out.join(CONFIG_FILE), &data.config)?;
    for split in SPLITS {
        write_split(&out.join(split.name()), data.split(split))?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<StoredDataset> {
    let config: SynthConfig = read_json(&dir.join(CONFIG_FILE))?;
    let graph = load_graph(&dir.join(GRAPH_FILE))?;
    let mut splits = Vec::new();
    for split in SPLITS {
        let path = dir.join(split.name());
        let videos = load_split(&path)?;
        validate_split(&path, &videos, graph.num_classes())?;
        splits.push(videos);
    }
    let [train, calib, test]: [Vec<StoredVideo>; 3] = splits.try_into().expect("three splits");
    Ok(StoredDataset { config, graph, train, calib, test })
}
