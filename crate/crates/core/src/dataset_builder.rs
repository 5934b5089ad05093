//! Curation of an action-tube dataset from per-frame object annotations.
//!
//! Pipeline: union of the relevant object boxes per frame forms the tube;
//! videos are kept when the tube's temporal ratio (duration / video length)
//! and spatial ratio (mean box area / frame area) fall inside closed ranges;
//! classes are then balanced to exactly `per_class` videos by seeded
//! sampling, dropping classes that are too small.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{union_box, BBox, Segment, Tube, VideoMeta};
use crate::scalar::Scalar;

/// Sampling scheme recorded in manifests.
pub const SAMPLER_NAME: &str = "chacha8(seed ^ fnv1a64(label)) + rand::seq::index::sample, indices sorted";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("video `{0}` has no relevant object annotations")]
    NoRelevantAnnotations(String),
    #[error("video `{video_id}`: annotation at frame {frame} is outside its {num_frames} frames")]
    FrameOutOfRange {
        video_id: String,
        frame: usize,
        num_frames: usize,
    },
    #[error("video `{0}` is listed twice in the metadata")]
    DuplicateVideo(String),
    #[error("annotation for unknown video `{0}`")]
    UnknownVideo(String),
}

/// One object box on one frame of the source annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObjectAnnotation<T = f64> {
    pub video_id: String,
    pub frame: usize,
    pub object_id: String,
    pub bbox: BBox<T>,
    /// Whether the object takes part in the action.
    pub relevant: bool,
}

/// Video metadata plus its action template label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub meta: VideoMeta,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry<T = f64> {
    pub meta: VideoMeta,
    pub label: String,
    pub class_id: u32,
    pub tube: Tube<T>,
    pub temporal_ratio: f64,
    pub spatial_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub temporal: f64,
    pub spatial: f64,
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub t_range: Range,
    pub s_range: Range,
    pub per_class: usize,
    pub seed: u64,
    pub bin_width: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            t_range: Range::new(0.2, 0.8),
            s_range: Range::new(0.01, 0.8),
            per_class: 300,
            seed: 0,
            bin_width: 0.05,
        }
    }
}

/// Unions the relevant boxes per frame into a ground-truth tube spanning
/// the first to the last annotated frame; frames in between without
/// annotations get corner-wise interpolated boxes.
pub fn synthesize_tube<T: Scalar>(annos: &[FrameObjectAnnotation<T>]) -> Result<Tube<T>, DatasetError> {
    let mut per_frame: BTreeMap<usize, Vec<BBox<T>>> = BTreeMap::new();
    for a in annos.iter().filter(|a| a.relevant) {
        per_frame.entry(a.frame).or_default().push(a.bbox);
    }
    let video = || annos.first().map(|a| a.video_id.clone()).unwrap_or_default();
    let (&first, _) = per_frame
        .first_key_value()
        .ok_or_else(|| DatasetError::NoRelevantAnnotations(video()))?;
    let (&last, _) = per_frame.last_key_value().expect("non-empty");

    let keyframes: Vec<(usize, BBox<T>)> = per_frame
        .iter()
        .map(|(&f, boxes)| (f, union_box(boxes).expect("non-empty frame")))
        .collect();
    let mut boxes = Vec::with_capacity(last - first + 1);
    for pair in keyframes.windows(2) {
        let ((fa, ba), (fb, bb)) = (pair[0], pair[1]);
        boxes.push(ba);
        for f in fa + 1..fb {
            boxes.push(ba.lerp(&bb, T::ratio(f - fa, fb - fa)));
        }
    }
    boxes.push(keyframes.last().expect("non-empty").1);

    let segment = Segment::new(first, last + 1).expect("last >= first");
    Ok(Tube::new(0, T::one(), segment, boxes).expect("one box per frame"))
}

pub fn compute_ratios<T: Scalar>(tube: &Tube<T>, meta: &VideoMeta) -> Ratios {
    let temporal = tube.segment().len() as f64 / meta.num_frames as f64;
    let area_sum: f64 = tube.boxes().iter().map(|b| b.area().to_f64_lossy()).sum();
    let spatial = area_sum / tube.boxes().len() as f64 / meta.frame_area();
    Ratios { temporal, spatial }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterViolation {
    TemporalBelow,
    TemporalAbove,
    SpatialBelow,
    SpatialAbove,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop(Vec<FilterViolation>),
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

pub fn filter_video(ratios: Ratios, t_range: Range, s_range: Range) -> FilterDecision {
    let mut bad = Vec::new();
    if ratios.temporal < t_range.lo {
        bad.push(FilterViolation::TemporalBelow);
    } else if !(ratios.temporal <= t_range.hi) {
        bad.push(FilterViolation::TemporalAbove);
    }
    if ratios.spatial < s_range.lo {
        bad.push(FilterViolation::SpatialBelow);
    } else if !(ratios.spatial <= s_range.hi) {
        bad.push(FilterViolation::SpatialAbove);
    }
    if bad.is_empty() {
        FilterDecision::Keep
    } else {
        FilterDecision::Drop(bad)
    }
}

/// 64-bit FNV-1a; keeps per-class seeds stable across platforms and releases.
fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Keeps exactly `n` videos per class, dropping classes with fewer. Output
/// is ordered by label then video id; class ids are the label ranks.
pub fn balance_classes<T: Scalar>(catalog: Vec<CatalogEntry<T>>, n: usize, seed: u64) -> Vec<CatalogEntry<T>> {
    let mut by_label: BTreeMap<String, Vec<CatalogEntry<T>>> = BTreeMap::new();
    for e in catalog {
        by_label.entry(e.label.clone()).or_default().push(e);
    }
    let mut out = Vec::new();
    let mut class_id = 0u32;
    for (label, mut entries) in by_label {
        if entries.len() < n || n == 0 {
            continue;
        }
        entries.sort_by(|a, b| a.meta.video_id.cmp(&b.meta.video_id));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(&label));
        let mut picked = index::sample(&mut rng, entries.len(), n).into_vec();
        picked.sort_unstable();
        let mut slots: Vec<Option<CatalogEntry<T>>> = entries.into_iter().map(Some).collect();
        for i in picked {
            let mut e = slots[i].take().expect("indices are distinct");
            e.class_id = class_id;
            e.tube = e.tube.with_class(class_id);
            out.push(e);
        }
        class_id += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub video_id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    Invalid(DatasetError),
    Filtered(Vec<FilterViolation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: String,
    pub class_id: Option<u32>,
    /// Videos of this class that passed the ratio filters.
    pub available: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub sampler: String,
    pub num_input_videos: usize,
    pub num_rejected_invalid: usize,
    pub num_dropped_temporal: usize,
    pub num_dropped_spatial: usize,
    pub num_kept_after_filter: usize,
    pub num_classes: usize,
    pub num_videos: usize,
    pub classes: Vec<ClassSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput<T = f64> {
    pub catalog: Vec<CatalogEntry<T>>,
    pub manifest: Manifest,
    pub rejections: Vec<Rejection>,
}

fn catalog_entry<T: Scalar>(
    record: &VideoRecord,
    annos: &[FrameObjectAnnotation<T>],
) -> Result<CatalogEntry<T>, DatasetError> {
    let meta = &record.meta;
    if let Some(a) = annos.iter().find(|a| a.frame >= meta.num_frames) {
        return Err(DatasetError::FrameOutOfRange {
            video_id: meta.video_id.clone(),
            frame: a.frame,
            num_frames: meta.num_frames,
        });
    }
    let tube = synthesize_tube(annos).map_err(|_| DatasetError::NoRelevantAnnotations(meta.video_id.clone()))?;
    let ratios = compute_ratios(&tube, meta);
    Ok(CatalogEntry {
        meta: meta.clone(),
        label: record.label.clone(),
        class_id: 0,
        tube,
        temporal_ratio: ratios.temporal,
        spatial_ratio: ratios.spatial,
    })
}

/// Synthesis, filtering and balancing over a whole corpus.
///
/// Videos without any annotation line are rejected as having no relevant
/// annotations; annotations for videos missing from `videos` are rejected
/// individually.
pub fn build_catalog<T: Scalar>(
    annotations: Vec<FrameObjectAnnotation<T>>,
    videos: &[VideoRecord],
    cfg: &DatasetConfig,
) -> Result<BuildOutput<T>, DatasetError> {
    let mut records: Vec<&VideoRecord> = videos.iter().collect();
    records.sort_by(|a, b| a.meta.video_id.cmp(&b.meta.video_id));
    if let Some(w) = records.windows(2).find(|w| w[0].meta.video_id == w[1].meta.video_id) {
        return Err(DatasetError::DuplicateVideo(w[0].meta.video_id.clone()));
    }

    let mut by_video: BTreeMap<String, Vec<FrameObjectAnnotation<T>>> = BTreeMap::new();
    for a in annotations {
        by_video.entry(a.video_id.clone()).or_default().push(a);
    }
    let mut rejections = Vec::new();
    for id in by_video.keys() {
        if records.binary_search_by(|r| r.meta.video_id.as_str().cmp(id)).is_err() {
            rejections.push(Rejection {
                video_id: id.clone(),
                reason: RejectReason::Invalid(DatasetError::UnknownVideo(id.clone())),
            });
        }
    }

    let empty = Vec::new();
    let synthesized: Vec<Result<CatalogEntry<T>, DatasetError>> = records
        .par_iter()
        .map(|r| catalog_entry(r, by_video.get(&r.meta.video_id).unwrap_or(&empty)))
        .collect();

    let (mut dropped_t, mut dropped_s, mut invalid) = (0, 0, 0);
    let mut kept = Vec::new();
    for (record, result) in records.iter().zip(synthesized) {
        let video_id = record.meta.video_id.clone();
        match result {
            Err(e) => {
                invalid += 1;
                rejections.push(Rejection {
                    video_id,
                    reason: RejectReason::Invalid(e),
                });
            }
            Ok(entry) => {
                let ratios = Ratios {
                    temporal: entry.temporal_ratio,
                    spatial: entry.spatial_ratio,
                };
                match filter_video(ratios, cfg.t_range, cfg.s_range) {
                    FilterDecision::Keep => kept.push(entry),
                    FilterDecision::Drop(v) => {
                        if v.iter()
                            .any(|x| matches!(x, FilterViolation::TemporalBelow | FilterViolation::TemporalAbove))
                        {
                            dropped_t += 1;
                        }
                        if v.iter()
                            .any(|x| matches!(x, FilterViolation::SpatialBelow | FilterViolation::SpatialAbove))
                        {
                            dropped_s += 1;
                        }
                        rejections.push(Rejection {
                            video_id,
                            reason: RejectReason::Filtered(v),
                        });
                    }
                }
            }
        }
    }
    rejections.sort_by(|a, b| a.video_id.cmp(&b.video_id));

    let num_kept = kept.len();
    let mut available: BTreeMap<String, usize> = BTreeMap::new();
    for e in &kept {
        *available.entry(e.label.clone()).or_default() += 1;
    }
    let catalog = balance_classes(kept, cfg.per_class, cfg.seed);
    let mut selected: BTreeMap<&str, (u32, usize)> = BTreeMap::new();
    for e in &catalog {
        selected.entry(e.label.as_str()).or_insert((e.class_id, 0)).1 += 1;
    }
    let classes = available
        .iter()
        .map(|(label, &n)| {
            let sel = selected.get(label.as_str());
            ClassSummary {
                label: label.clone(),
                class_id: sel.map(|s| s.0),
                available: n,
                selected: sel.map_or(0, |s| s.1),
            }
        })
        .collect();

    let manifest = Manifest {
        config: cfg.clone(),
        sampler: SAMPLER_NAME.to_string(),
        num_input_videos: records.len(),
        num_rejected_invalid: invalid,
        num_dropped_temporal: dropped_t,
        num_dropped_spatial: dropped_s,
        num_kept_after_filter: num_kept,
        num_classes: selected.len(),
        num_videos: catalog.len(),
        classes,
    };
    Ok(BuildOutput {
        catalog,
        manifest,
        rejections,
    })
}

/// Re-applies filtering (with ratios recomputed from the stored tubes) and
/// balancing to an existing catalog. A built catalog is a fixed point.
pub fn rebuild_catalog<T: Scalar>(catalog: Vec<CatalogEntry<T>>, cfg: &DatasetConfig) -> Vec<CatalogEntry<T>> {
    let kept = catalog
        .into_iter()
        .filter(|e| filter_video(compute_ratios(&e.tube, &e.meta), cfg.t_range, cfg.s_range).is_keep())
        .collect();
    balance_classes(kept, cfg.per_class, cfg.seed)
}

/// Fixed-width histogram over `[0, 1]`; `1.0` falls in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(bin_width: f64) -> Self {
        assert!(bin_width > 0.0 && bin_width <= 1.0, "bin width must be in (0, 1]");
        let bins = ((1.0 / bin_width) - 1e-9).ceil().max(1.0) as usize;
        Self {
            bin_width,
            counts: vec![0; bins],
        }
    }

    pub fn edge(&self, i: usize) -> f64 {
        (i as f64 * self.bin_width).min(1.0)
    }

    /// Bin with `edge(i) <= v < edge(i + 1)`, clamped to the histogram.
    /// Values within 1e-9 bins below an edge count as on it, so `0.7` lands
    /// in bin 7 at width `0.1` despite `7.0 * 0.1 > 0.7`.
    pub fn bin_of(&self, v: f64) -> usize {
        let last = self.counts.len() - 1;
        if !(v > 0.0) {
            return 0;
        }
        ((v / self.bin_width + 1e-9).floor() as usize).min(last)
    }

    pub fn add(&mut self, v: f64) {
        let i = self.bin_of(v);
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_classes: usize,
    pub num_videos: usize,
    pub mean_temporal_ratio: f64,
    pub mean_spatial_ratio: f64,
    pub temporal: Histogram,
    pub spatial: Histogram,
}

pub fn dataset_stats<T: Scalar>(catalog: &[CatalogEntry<T>], bin_width: f64) -> DatasetStats {
    let mut temporal = Histogram::new(bin_width);
    let mut spatial = Histogram::new(bin_width);
    let mut labels = std::collections::BTreeSet::new();
    let (mut t_sum, mut s_sum) = (0.0, 0.0);
    for e in catalog {
        temporal.add(e.temporal_ratio);
        spatial.add(e.spatial_ratio);
        t_sum += e.temporal_ratio;
        s_sum += e.spatial_ratio;
        labels.insert(e.label.as_str());
    }
    let n = catalog.len();
    let avg = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    DatasetStats {
        num_classes: labels.len(),
        num_videos: n,
        mean_temporal_ratio: avg(t_sum),
        mean_spatial_ratio: avg(s_sum),
        temporal,
        spatial,
    }
}
