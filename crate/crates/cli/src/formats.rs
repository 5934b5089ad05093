//! Line-delimited JSON artifacts.
//!
//! Every line is one object carrying `schema` (the record kind) and
//! `version` (`"MAJOR.MINOR"`) next to the record's own fields. Readers
//! accept any minor version of a known major and reject everything else.
//! Floats are written in their shortest round-trip form, so reading back
//! a written file reproduces the in-memory values bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tubekit::corpus::{LabeledSegment, LabeledTube, VideoAnnotation, VideoFrames, VideoProposals};
use tubekit::dataset_builder::{CatalogEntry, FrameObjectAnnotation, VideoRecord};
use tubekit::geometry::{BBox, Segment, Tube, VideoMeta};
use tubekit::suppression::ScoredBox;
use tubekit::tube_linker::{ClassifiedProposal, FrameDetections};

use crate::error::{CliError, Result};

pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_VERSION: &str = "1.0";

pub trait Record: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;
}

#[derive(Serialize)]
struct Outgoing<'a, R> {
    schema: &'static str,
    version: &'static str,
    #[serde(flatten)]
    record: &'a R,
}

#[derive(Deserialize)]
struct Header {
    schema: String,
    version: String,
}

#[derive(Deserialize)]
struct Incoming<R> {
    #[allow(dead_code)]
    schema: String,
    #[allow(dead_code)]
    version: String,
    #[serde(flatten)]
    record: R,
}

fn check_version(version: &str) -> std::result::Result<(), String> {
    let major = version.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match major {
        Some(FORMAT_MAJOR) => Ok(()),
        _ => Err(format!(
            "unsupported format version `{version}` (reader supports {FORMAT_MAJOR}.x)"
        )),
    }
}

pub fn to_line<R: Record>(record: &R) -> String {
    serde_json::to_string(&Outgoing {
        schema: R::SCHEMA,
        version: FORMAT_VERSION,
        record,
    })
    .expect("records serialize")
}

/// Parses one line, checking schema and version.
pub fn from_line<R: Record>(line: &str) -> std::result::Result<R, String> {
    let header: Header = serde_json::from_str(line).map_err(|e| e.to_string())?;
    check_version(&header.version)?;
    if header.schema != R::SCHEMA {
        return Err(format!("expected a `{}` record, found `{}`", R::SCHEMA, header.schema));
    }
    let parsed: Incoming<R> = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Ok(parsed.record)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn read_jsonl<R: Record>(path: &Path) -> Result<Vec<R>> {
    read_jsonl_with(path, |r: R| Ok(r))
}

/// Reads and converts every record, reporting the line of the first failure.
pub fn read_jsonl_with<R: Record, U>(
    path: &Path,
    mut convert: impl FnMut(R) -> std::result::Result<U, String>,
) -> Result<Vec<U>> {
    let text = read_text(path)?;
    lines(&text)
        .map(|(n, line)| {
            from_line::<R>(line)
                .and_then(&mut convert)
                .map_err(|msg| CliError::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    msg,
                })
        })
        .collect()
}

/// Schema of the first record in the file, `None` for an empty file.
pub fn peek_schema(path: &Path) -> Result<Option<String>> {
    let text = read_text(path)?;
    let Some((n, line)) = lines(&text).next() else {
        return Ok(None);
    };
    let header: Header = serde_json::from_str(line).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: n,
        msg: e.to_string(),
    })?;
    check_version(&header.version).map_err(|msg| CliError::Parse {
        path: path.to_path_buf(),
        line: n,
        msg,
    })?;
    Ok(Some(header.schema))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn jsonl_string<'a, R: Record + 'a>(records: impl IntoIterator<Item = &'a R>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&to_line(r));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<'a, R: Record + 'a>(path: &Path, records: impl IntoIterator<Item = &'a R>) -> Result<()> {
    write_atomic(path, jsonl_string(records).as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn bbox(c: [f64; 4]) -> std::result::Result<BBox, String> {
    BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| e.to_string())
}

fn segment(start: usize, end: usize) -> std::result::Result<Segment, String> {
    Segment::new(start, end).map_err(|e| e.to_string())
}

fn tube(class_id: u32, score: f64, start: usize, end: usize, boxes: &[[f64; 4]]) -> std::result::Result<Tube, String> {
    if !score.is_finite() {
        return Err(format!("score {score} is not finite"));
    }
    let boxes = boxes
        .iter()
        .map(|&c| bbox(c))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Tube::new(class_id, score, segment(start, end)?, boxes).map_err(|e| e.to_string())
}

/// A detected tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeRecord {
    pub video_id: String,
    pub class_id: u32,
    pub score: f64,
    pub start: usize,
    pub end: usize,
    pub boxes: Vec<[f64; 4]>,
}

impl Record for TubeRecord {
    const SCHEMA: &'static str = "tubekit.tube";
}

impl TubeRecord {
    pub fn from_tube(video_id: &str, t: &Tube) -> Self {
        Self {
            video_id: video_id.to_string(),
            class_id: t.class_id(),
            score: t.score(),
            start: t.segment().start(),
            end: t.segment().end(),
            boxes: t.boxes().iter().map(BBox::coords).collect(),
        }
    }

    pub fn into_labeled(self) -> std::result::Result<LabeledTube, String> {
        let t = tube(self.class_id, self.score, self.start, self.end, &self.boxes)?;
        Ok(LabeledTube::new(self.video_id, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTubeRecord {
    pub class_id: u32,
    pub start: usize,
    pub end: usize,
    pub boxes: Vec<[f64; 4]>,
}

/// One video of ground truth: metadata and all its tubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtVideoRecord {
    pub video_id: String,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub tubes: Vec<GtTubeRecord>,
}

impl Record for GtVideoRecord {
    const SCHEMA: &'static str = "tubekit.gt_video";
}

impl GtVideoRecord {
    pub fn from_annotation(v: &VideoAnnotation) -> Self {
        Self {
            video_id: v.meta.video_id.clone(),
            num_frames: v.meta.num_frames,
            width: v.meta.width,
            height: v.meta.height,
            fps: v.meta.fps,
            tubes: v
                .tubes
                .iter()
                .map(|t| GtTubeRecord {
                    class_id: t.class_id(),
                    start: t.segment().start(),
                    end: t.segment().end(),
                    boxes: t.boxes().iter().map(BBox::coords).collect(),
                })
                .collect(),
        }
    }

    pub fn into_annotation(self) -> std::result::Result<VideoAnnotation, String> {
        let tubes = self
            .tubes
            .iter()
            .map(|t| tube(t.class_id, 1.0, t.start, t.end, &t.boxes))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(VideoAnnotation {
            meta: VideoMeta {
                video_id: self.video_id,
                num_frames: self.num_frames,
                width: self.width,
                height: self.height,
                fps: self.fps,
            },
            tubes,
        })
    }
}

/// A temporal proposal; `class_id` is absent for class-agnostic proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    pub score: f64,
}

impl Record for ProposalRecord {
    const SCHEMA: &'static str = "tubekit.proposal";
}

impl ProposalRecord {
    pub fn from_classified(video_id: &str, p: &ClassifiedProposal) -> Self {
        Self {
            video_id: video_id.to_string(),
            start: p.segment.start(),
            end: p.segment.end(),
            class_id: Some(p.class_id),
            score: p.cls_score,
        }
    }

    fn checked_segment(&self) -> std::result::Result<Segment, String> {
        if !self.score.is_finite() {
            return Err(format!("score {} is not finite", self.score));
        }
        segment(self.start, self.end)
    }

    pub fn to_classified(&self) -> std::result::Result<ClassifiedProposal, String> {
        let class_id = self
            .class_id
            .ok_or("linking needs classified proposals (`class_id` missing)")?;
        Ok(ClassifiedProposal {
            segment: self.checked_segment()?,
            class_id,
            cls_score: self.score,
        })
    }

    pub fn to_labeled_segment(&self) -> std::result::Result<LabeledSegment, String> {
        Ok(LabeledSegment {
            video_id: self.video_id.clone(),
            segment: self.checked_segment()?,
            score: self.score,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBoxRecord {
    pub bbox: [f64; 4],
    pub score: f64,
}

/// Detected boxes on one frame; an empty `boxes` list still registers the
/// video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetsRecord {
    pub video_id: String,
    pub frame: usize,
    pub boxes: Vec<ScoredBoxRecord>,
}

impl Record for FrameDetsRecord {
    const SCHEMA: &'static str = "tubekit.frame_dets";
}

impl FrameDetsRecord {
    pub fn from_frame(video_id: &str, d: &FrameDetections) -> Self {
        Self {
            video_id: video_id.to_string(),
            frame: d.frame,
            boxes: d
                .boxes
                .iter()
                .map(|b| ScoredBoxRecord {
                    bbox: b.bbox.coords(),
                    score: b.score,
                })
                .collect(),
        }
    }

    pub fn to_frame(&self) -> std::result::Result<FrameDetections, String> {
        let boxes = self
            .boxes
            .iter()
            .map(|b| {
                if !b.score.is_finite() {
                    return Err(format!("score {} is not finite", b.score));
                }
                Ok(ScoredBox::new(bbox(b.bbox)?, b.score, self.frame))
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        Ok(FrameDetections::new(self.frame, boxes))
    }
}

/// Frame records for every frame of every video, with empty frames
/// included so that detection-free videos stay known.
pub fn frame_records(videos: &[VideoFrames], num_frames: &BTreeMap<String, usize>) -> Vec<FrameDetsRecord> {
    let mut out = Vec::new();
    for v in videos {
        let n = num_frames.get(&v.video_id).copied().unwrap_or(0);
        let last = v.frames.keys().next_back().map_or(0, |f| f + 1);
        for f in 0..n.max(last) {
            match v.frames.get(&f) {
                Some(d) => out.push(FrameDetsRecord::from_frame(&v.video_id, d)),
                None => out.push(FrameDetsRecord {
                    video_id: v.video_id.clone(),
                    frame: f,
                    boxes: Vec::new(),
                }),
            }
        }
    }
    out
}

/// Groups frame records by video; repeated `(video, frame)` pairs merge.
pub fn group_frames(records: Vec<(FrameDetsRecord, FrameDetections)>) -> BTreeMap<String, VideoFrames> {
    let mut out: BTreeMap<String, VideoFrames> = BTreeMap::new();
    for (r, d) in records {
        let v = out.entry(r.video_id.clone()).or_insert_with(|| VideoFrames {
            video_id: r.video_id.clone(),
            frames: BTreeMap::new(),
        });
        v.frames
            .entry(d.frame)
            .and_modify(|e| e.boxes.extend(d.boxes.iter().cloned()))
            .or_insert(d);
    }
    out
}

pub fn proposal_records(videos: &[VideoProposals]) -> Vec<ProposalRecord> {
    videos
        .iter()
        .flat_map(|v| {
            v.proposals
                .iter()
                .map(|p| ProposalRecord::from_classified(&v.video_id, p))
        })
        .collect()
}

/// One object box of the source annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub frame: usize,
    pub object_id: String,
    pub bbox: [f64; 4],
    pub relevant: bool,
}

impl Record for AnnotationRecord {
    const SCHEMA: &'static str = "tubekit.annotation";
}

impl AnnotationRecord {
    pub fn from_annotation(a: &FrameObjectAnnotation) -> Self {
        Self {
            video_id: a.video_id.clone(),
            frame: a.frame,
            object_id: a.object_id.clone(),
            bbox: a.bbox.coords(),
            relevant: a.relevant,
        }
    }

    pub fn into_annotation(self) -> std::result::Result<FrameObjectAnnotation, String> {
        Ok(FrameObjectAnnotation {
            bbox: bbox(self.bbox)?,
            video_id: self.video_id,
            frame: self.frame,
            object_id: self.object_id,
            relevant: self.relevant,
        })
    }
}

/// Video metadata with its action template label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub video_id: String,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub label: String,
}

impl Record for MetaRecord {
    const SCHEMA: &'static str = "tubekit.video_meta";
}

impl MetaRecord {
    pub fn from_record(r: &VideoRecord) -> Self {
        Self {
            video_id: r.meta.video_id.clone(),
            num_frames: r.meta.num_frames,
            width: r.meta.width,
            height: r.meta.height,
            fps: r.meta.fps,
            label: r.label.clone(),
        }
    }

    pub fn into_record(self) -> std::result::Result<VideoRecord, String> {
        if self.num_frames == 0 || self.width == 0 || self.height == 0 {
            return Err(format!(
                "video `{}` has an empty frame count or resolution",
                self.video_id
            ));
        }
        Ok(VideoRecord {
            meta: VideoMeta {
                video_id: self.video_id,
                num_frames: self.num_frames,
                width: self.width,
                height: self.height,
                fps: self.fps,
            },
            label: self.label,
        })
    }
}

/// One curated video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub video_id: String,
    pub label: String,
    pub class_id: u32,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub start: usize,
    pub end: usize,
    pub boxes: Vec<[f64; 4]>,
    pub temporal_ratio: f64,
    pub spatial_ratio: f64,
}

impl Record for CatalogRecord {
    const SCHEMA: &'static str = "tubekit.catalog";
}

impl CatalogRecord {
    pub fn from_entry(e: &CatalogEntry) -> Self {
        Self {
            video_id: e.meta.video_id.clone(),
            label: e.label.clone(),
            class_id: e.class_id,
            num_frames: e.meta.num_frames,
            width: e.meta.width,
            height: e.meta.height,
            fps: e.meta.fps,
            start: e.tube.segment().start(),
            end: e.tube.segment().end(),
            boxes: e.tube.boxes().iter().map(BBox::coords).collect(),
            temporal_ratio: e.temporal_ratio,
            spatial_ratio: e.spatial_ratio,
        }
    }

    pub fn into_entry(self) -> std::result::Result<CatalogEntry, String> {
        let tube = tube(self.class_id, 1.0, self.start, self.end, &self.boxes)?;
        Ok(CatalogEntry {
            meta: VideoMeta {
                video_id: self.video_id,
                num_frames: self.num_frames,
                width: self.width,
                height: self.height,
                fps: self.fps,
            },
            label: self.label,
            class_id: self.class_id,
            tube,
            temporal_ratio: self.temporal_ratio,
            spatial_ratio: self.spatial_ratio,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tube_record() -> TubeRecord {
        TubeRecord {
            video_id: "v1".into(),
            class_id: 3,
            score: 0.1 + 0.2,
            start: 4,
            end: 6,
            boxes: vec![[1.0 / 3.0, 2.0, 10.5, 20.0], [1e-17, 2.0, 10.5, 1e300]],
        }
    }

    #[test]
    fn line_round_trip_is_exact() {
        let r = tube_record();
        let line = to_line(&r);
        assert!(line.starts_with(r#"{"schema":"tubekit.tube","version":"1.0","#));
        let back: TubeRecord = from_line(&line).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.score.to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn unknown_major_version_is_rejected() {
        let line = to_line(&tube_record()).replace(r#""version":"1.0""#, r#""version":"2.0""#);
        assert!(from_line::<TubeRecord>(&line)
            .unwrap_err()
            .contains("unsupported format version"));
        let minor = to_line(&tube_record()).replace(r#""version":"1.0""#, r#""version":"1.7""#);
        assert!(from_line::<TubeRecord>(&minor).is_ok());
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let line = to_line(&tube_record());
        assert!(from_line::<ProposalRecord>(&line)
            .unwrap_err()
            .contains("expected a `tubekit.proposal` record"));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut r = tube_record();
        r.boxes.pop();
        assert!(r.into_labeled().is_err());
        let mut r = tube_record();
        r.boxes[0] = [5.0, 0.0, 1.0, 1.0];
        assert!(r.into_labeled().is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let text = format!("{}\n\nnot json\n", to_line(&tube_record()));
        fs::write(&path, text).unwrap();
        match read_jsonl::<TubeRecord>(&path) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        write_jsonl(&path, &[tube_record()]).unwrap();
        write_jsonl::<TubeRecord>(&path, &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
