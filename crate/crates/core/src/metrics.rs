//! Detection evaluation: greedy matching, average precision, video mAP,
//! frame mAP, temporal mAP and average recall over temporal proposals.
//!
//! Every metric follows the same recipe. Detections of a class are pooled
//! over the corpus and ranked by descending score (ties broken by video,
//! then geometry, never by input order). Within each video (or frame) the
//! ranked detections are matched greedily: a detection takes its
//! best-overlapping still-unmatched ground truth of the same class and is a
//! true positive iff that overlap is at least `alpha`. AP is then integrated
//! from the resulting precision/recall staircase.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledSegment, LabeledTube, VideoAnnotation};
use crate::geometry::{tube_st_iou, BBox, Segment, Tube};
use crate::scalar::{cmp_asc, cmp_desc, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("detections reference video `{0}` which has no metadata")]
    UnknownVideo(String),
    #[error("video `{0}` appears twice in the ground truth")]
    DuplicateVideo(String),
    #[error("tube [{start}, {end}) in video `{video_id}` exceeds its {num_frames} frames")]
    TubeOutsideVideo {
        video_id: String,
        start: usize,
        end: usize,
        num_frames: usize,
    },
    #[error("at least one IoU threshold is required")]
    NoThresholds,
}

/// Precision/recall integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Video,
    Frame,
    Temporal,
    AverageRecall,
}

/// How frame mAP aggregates over videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramePooling {
    /// One AP per class over all frames of all videos.
    #[default]
    Corpus,
    /// mAP per video, averaged over videos with ground truth.
    PerVideo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub ap_mode: ApMode,
    pub frame_pooling: FramePooling,
}

/// Greedy matching outcome for one class, in ranked detection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// `Some(gt)` for a true positive matched to ground truth `gt`.
    pub outcomes: Vec<Option<usize>>,
    pub num_gts: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_some()).count()
    }
}

/// Greedy matching of `dets` (already in descending-score order) against
/// `gts`. Overlap ties go to the lower GT index.
pub fn match_greedy<D, G, T: Scalar>(dets: &[D], gts: &[G], overlap: impl Fn(&D, &G) -> T, alpha: T) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let outcomes = dets
        .iter()
        .map(|d| {
            let mut best: Option<(usize, T)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = overlap(d, gt);
                match best {
                    Some((_, bv)) if bv >= v => {}
                    _ => best = Some((g, v)),
                }
            }
            match best {
                Some((g, v)) if v >= alpha => {
                    taken[g] = true;
                    Some(g)
                }
                _ => None,
            }
        })
        .collect();
    MatchResult {
        outcomes,
        num_gts: gts.len(),
    }
}

/// AP of one class; `None` when the class has no ground truth.
///
/// Computed in `S`, so `Rational` gives the exact value.
pub fn average_precision<S: Scalar>(m: &MatchResult, mode: ApMode) -> Option<S> {
    if m.num_gts == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut cum_tp = Vec::with_capacity(m.outcomes.len());
    let precision: Vec<S> = m
        .outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            tp += usize::from(o.is_some());
            cum_tp.push(tp);
            S::ratio(tp, i + 1)
        })
        .collect();

    match mode {
        ApMode::AllPoint => {
            // each TP raises recall by exactly 1 / num_gts
            let mut envelope = S::zero();
            let mut sum = S::zero();
            for (i, o) in m.outcomes.iter().enumerate().rev() {
                envelope = envelope.max_of(precision[i]);
                if o.is_some() {
                    sum = sum + envelope;
                }
            }
            Some(sum / S::from_count(m.num_gts))
        }
        ApMode::ElevenPoint => {
            let mut sum = S::zero();
            for k in 0..=10usize {
                let best = precision
                    .iter()
                    .zip(&cum_tp)
                    .filter(|(_, &tp)| tp * 10 >= k * m.num_gts)
                    .fold(S::zero(), |acc, (&p, _)| acc.max_of(p));
                sum = sum + best;
            }
            Some(sum / S::from_count(11))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    /// `None` for classes without ground truth; they do not enter the mAP.
    pub ap: Option<f64>,
    pub num_gts: usize,
    pub num_dets: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDiagnostics {
    pub num_dets: usize,
    pub num_gts: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub alpha: f64,
    pub ap_mode: ApMode,
    pub per_class: BTreeMap<u32, ClassAp>,
    /// Unweighted mean AP over classes with at least one ground truth.
    pub map: f64,
    pub per_video: BTreeMap<String, VideoDiagnostics>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    fn new(metric: MetricKind, alpha: f64, ap_mode: ApMode, table: ClassTable, index: &VideoIndex) -> Self {
        let map = mean(table.per_class.values().filter_map(|c| c.ap));
        let warnings = table
            .per_class
            .iter()
            .filter(|(_, c)| c.num_gts == 0)
            .map(|(k, c)| {
                format!(
                    "class {k} has {} detections but no ground truth; counted as false positives",
                    c.num_dets
                )
            })
            .collect();
        let per_video = index.ids.iter().cloned().zip(table.per_video).collect();
        Self {
            metric,
            alpha,
            ap_mode,
            per_class: table.per_class,
            map,
            per_video,
            warnings,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Sorted video ids of the ground truth.
struct VideoIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl VideoIndex {
    fn new<T: Scalar>(gts: &[VideoAnnotation<T>]) -> Result<Self, MetricsError> {
        let mut ids: Vec<String> = gts.iter().map(|v| v.meta.video_id.clone()).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(MetricsError::DuplicateVideo(w[0].clone()));
        }
        for v in gts {
            for t in &v.tubes {
                if !v.meta.covers(&t.segment()) {
                    return Err(MetricsError::TubeOutsideVideo {
                        video_id: v.meta.video_id.clone(),
                        start: t.segment().start(),
                        end: t.segment().end(),
                        num_frames: v.meta.num_frames,
                    });
                }
            }
        }
        let lookup = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self { ids, lookup })
    }

    fn get(&self, id: &str) -> Result<usize, MetricsError> {
        self.lookup
            .get(id)
            .copied()
            .ok_or_else(|| MetricsError::UnknownVideo(id.to_string()))
    }
}

struct Det<K, D, T> {
    group: K,
    video: usize,
    class: u32,
    score: T,
    item: D,
}

struct Gt<K, G> {
    group: K,
    video: usize,
    class: u32,
    item: G,
}

struct ClassTable {
    per_class: BTreeMap<u32, ClassAp>,
    per_video: Vec<VideoDiagnostics>,
}

/// Pools detections per class, matches inside each group, integrates AP.
#[allow(clippy::too_many_arguments)]
fn evaluate_classes<K, D, G, T>(
    dets: &[Det<K, D, T>],
    gts: &[Gt<K, G>],
    num_videos: usize,
    overlap: impl Fn(&D, &G) -> T + Sync,
    tie: impl Fn(&D, &D) -> Ordering + Sync,
    alpha: T,
    mode: ApMode,
) -> ClassTable
where
    K: Ord + Copy + Send + Sync,
    D: Sync,
    G: Sync,
    T: Scalar,
{
    let mut det_by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        det_by_class.entry(d.class).or_default().push(i);
    }
    let mut gt_by_class: BTreeMap<u32, BTreeMap<K, Vec<usize>>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_by_class
            .entry(g.class)
            .or_default()
            .entry(g.group)
            .or_default()
            .push(i);
    }
    let classes: BTreeSet<u32> = det_by_class.keys().chain(gt_by_class.keys()).copied().collect();
    let no_dets = Vec::new();
    let no_gts = BTreeMap::new();

    let results: Vec<(u32, ClassAp, Vec<(usize, VideoDiagnostics)>)> = classes
        .into_par_iter()
        .map(|class| {
            let mut ranked = det_by_class.get(&class).unwrap_or(&no_dets).clone();
            ranked.sort_by(|&a, &b| {
                let (da, db) = (&dets[a], &dets[b]);
                cmp_desc(&da.score, &db.score)
                    .then(da.group.cmp(&db.group))
                    .then_with(|| tie(&da.item, &db.item))
            });
            let gt_groups = gt_by_class.get(&class).unwrap_or(&no_gts);

            let mut positions: BTreeMap<K, Vec<usize>> = BTreeMap::new();
            for (rank, &i) in ranked.iter().enumerate() {
                positions.entry(dets[i].group).or_default().push(rank);
            }
            let mut outcomes = vec![None; ranked.len()];
            for (group, ranks) in &positions {
                let Some(gt_idx) = gt_groups.get(group) else {
                    continue;
                };
                let group_dets: Vec<&D> = ranks.iter().map(|&r| &dets[ranked[r]].item).collect();
                let group_gts: Vec<&G> = gt_idx.iter().map(|&g| &gts[g].item).collect();
                let m = match_greedy(&group_dets, &group_gts, |d, g| overlap(d, g), alpha);
                for (&r, o) in ranks.iter().zip(m.outcomes) {
                    outcomes[r] = o.map(|local| gt_idx[local]);
                }
            }

            let num_gts = gt_groups.values().map(Vec::len).sum();
            let m = MatchResult { outcomes, num_gts };

            let mut tally: BTreeMap<usize, VideoDiagnostics> = BTreeMap::new();
            for (&i, o) in ranked.iter().zip(&m.outcomes) {
                let e = tally.entry(dets[i].video).or_default();
                e.num_dets += 1;
                e.true_positives += usize::from(o.is_some());
            }
            for g in gt_groups.values().flatten() {
                tally.entry(gts[*g].video).or_default().num_gts += 1;
            }

            let row = ClassAp {
                ap: average_precision::<f64>(&m, mode),
                num_gts,
                num_dets: ranked.len(),
                true_positives: m.true_positives(),
            };
            (class, row, tally.into_iter().collect())
        })
        .collect();

    let mut per_class = BTreeMap::new();
    let mut per_video = vec![VideoDiagnostics::default(); num_videos];
    for (class, row, tally) in results {
        per_class.insert(class, row);
        for (v, d) in tally {
            per_video[v].num_dets += d.num_dets;
            per_video[v].num_gts += d.num_gts;
            per_video[v].true_positives += d.true_positives;
        }
    }
    ClassTable { per_class, per_video }
}

fn cmp_boxes<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> Ordering {
    a.coords()
        .iter()
        .zip(b.coords().iter())
        .map(|(x, y)| cmp_asc(x, y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Content order on tubes, used only to break score ties.
fn cmp_tubes<T: Scalar>(a: &Tube<T>, b: &Tube<T>) -> Ordering {
    a.segment()
        .cmp(&b.segment())
        .then(a.class_id().cmp(&b.class_id()))
        .then_with(|| {
            a.boxes()
                .iter()
                .zip(b.boxes())
                .map(|(x, y)| cmp_boxes(x, y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Video mAP@alpha with spatio-temporal tube IoU as overlap.
pub fn video_map<T: Scalar>(
    dets: &[LabeledTube<T>],
    gts: &[VideoAnnotation<T>],
    alpha: T,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    let index = VideoIndex::new(gts)?;
    let det_items = dets
        .iter()
        .map(|d| {
            let v = index.get(&d.video_id)?;
            Ok(Det {
                group: v,
                video: v,
                class: d.tube.class_id(),
                score: d.tube.score(),
                item: &d.tube,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let gt_items: Vec<Gt<usize, &Tube<T>>> = gts
        .iter()
        .flat_map(|v| {
            let vi = index.get(&v.meta.video_id).expect("indexed");
            v.tubes.iter().map(move |t| Gt {
                group: vi,
                video: vi,
                class: t.class_id(),
                item: t,
            })
        })
        .collect();
    let table = evaluate_classes(
        &det_items,
        &gt_items,
        index.ids.len(),
        |d, g| tube_st_iou(d, g),
        |a, b| cmp_tubes(a, b),
        alpha,
        opts.ap_mode,
    );
    Ok(EvalReport::new(
        MetricKind::Video,
        alpha.to_f64_lossy(),
        opts.ap_mode,
        table,
        &index,
    ))
}

/// Frame mAP@alpha: tubes are exploded into per-frame boxes that keep the
/// tube's class and score, and matched per frame by box IoU.
pub fn frame_map<T: Scalar>(
    dets: &[LabeledTube<T>],
    gts: &[VideoAnnotation<T>],
    alpha: T,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    let index = VideoIndex::new(gts)?;
    let mut det_items = Vec::new();
    for d in dets {
        let v = index.get(&d.video_id)?;
        for (frame, bbox) in d.tube.frames() {
            det_items.push(Det {
                group: (v, frame),
                video: v,
                class: d.tube.class_id(),
                score: d.tube.score(),
                item: *bbox,
            });
        }
    }
    let mut gt_items = Vec::new();
    for v in gts {
        let vi = index.get(&v.meta.video_id)?;
        for t in &v.tubes {
            for (frame, bbox) in t.frames() {
                gt_items.push(Gt {
                    group: (vi, frame),
                    video: vi,
                    class: t.class_id(),
                    item: *bbox,
                });
            }
        }
    }
    let eval = |dets: &[Det<(usize, usize), BBox<T>, T>], gts: &[Gt<(usize, usize), BBox<T>>]| {
        evaluate_classes(
            dets,
            gts,
            index.ids.len(),
            |a: &BBox<T>, b: &BBox<T>| a.iou(b),
            cmp_boxes,
            alpha,
            opts.ap_mode,
        )
    };
    let alpha_f = alpha.to_f64_lossy();

    match opts.frame_pooling {
        FramePooling::Corpus => {
            let table = eval(&det_items, &gt_items);
            Ok(EvalReport::new(MetricKind::Frame, alpha_f, opts.ap_mode, table, &index))
        }
        FramePooling::PerVideo => {
            let mut video_maps = Vec::new();
            let mut class_aps: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            let mut combined = ClassTable {
                per_class: BTreeMap::new(),
                per_video: vec![VideoDiagnostics::default(); index.ids.len()],
            };
            for v in 0..index.ids.len() {
                let vd: Vec<_> = det_items.iter().filter(|d| d.video == v).map(clone_det).collect();
                let vg: Vec<_> = gt_items.iter().filter(|g| g.video == v).map(clone_gt).collect();
                let table = eval(&vd, &vg);
                if table.per_class.values().any(|c| c.ap.is_some()) {
                    video_maps.push(mean(table.per_class.values().filter_map(|c| c.ap)));
                }
                for (class, row) in table.per_class {
                    if let Some(ap) = row.ap {
                        class_aps.entry(class).or_default().push(ap);
                    }
                    let e = combined.per_class.entry(class).or_insert(ClassAp {
                        ap: None,
                        num_gts: 0,
                        num_dets: 0,
                        true_positives: 0,
                    });
                    e.num_gts += row.num_gts;
                    e.num_dets += row.num_dets;
                    e.true_positives += row.true_positives;
                }
                combined.per_video[v] = table.per_video[v].clone();
            }
            for (class, aps) in class_aps {
                if let Some(e) = combined.per_class.get_mut(&class) {
                    e.ap = Some(mean(aps.into_iter()));
                }
            }
            let mut report = EvalReport::new(MetricKind::Frame, alpha_f, opts.ap_mode, combined, &index);
            report.map = mean(video_maps.into_iter());
            Ok(report)
        }
    }
}

fn clone_det<K: Copy, T: Scalar>(d: &Det<K, BBox<T>, T>) -> Det<K, BBox<T>, T> {
    Det {
        group: d.group,
        video: d.video,
        class: d.class,
        score: d.score,
        item: d.item,
    }
}

fn clone_gt<K: Copy, T: Scalar>(g: &Gt<K, BBox<T>>) -> Gt<K, BBox<T>> {
    Gt {
        group: g.group,
        video: g.video,
        class: g.class,
        item: g.item,
    }
}

/// `[0.50, 0.55, ..., 0.95]`.
pub fn default_temporal_alphas() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalReport {
    pub per_alpha: Vec<EvalReport>,
    /// Unweighted mean of the per-alpha mAPs.
    pub average_map: f64,
}

impl TemporalReport {
    pub fn map_at(&self, alpha: f64) -> Option<f64> {
        self.per_alpha
            .iter()
            .find(|r| (r.alpha - alpha).abs() < 1e-9)
            .map(|r| r.map)
    }
}

/// Temporal mAP at each alpha (segment IoU only), plus their mean.
///
/// Identical `(video, segment, class)` detections collapse to the highest
/// score; identical ground-truth instances collapse to one.
pub fn temporal_map<T: Scalar>(
    dets: &[LabeledTube<T>],
    gts: &[VideoAnnotation<T>],
    alphas: &[T],
    opts: &EvalOptions,
) -> Result<TemporalReport, MetricsError> {
    if alphas.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    let index = VideoIndex::new(gts)?;
    let mut best: BTreeMap<(usize, Segment, u32), T> = BTreeMap::new();
    for d in dets {
        let v = index.get(&d.video_id)?;
        let key = (v, d.tube.segment(), d.tube.class_id());
        let s = d.tube.score();
        best.entry(key).and_modify(|cur| *cur = cur.max_of(s)).or_insert(s);
    }
    let det_items: Vec<Det<usize, Segment, T>> = best
        .into_iter()
        .map(|((v, seg, class), score)| Det {
            group: v,
            video: v,
            class,
            score,
            item: seg,
        })
        .collect();
    let mut gt_set: BTreeSet<(usize, Segment, u32)> = BTreeSet::new();
    for v in gts {
        let vi = index.get(&v.meta.video_id)?;
        for t in &v.tubes {
            gt_set.insert((vi, t.segment(), t.class_id()));
        }
    }
    let gt_items: Vec<Gt<usize, Segment>> = gt_set
        .into_iter()
        .map(|(v, seg, class)| Gt {
            group: v,
            video: v,
            class,
            item: seg,
        })
        .collect();

    let per_alpha: Vec<EvalReport> = alphas
        .iter()
        .map(|&alpha| {
            let table = evaluate_classes(
                &det_items,
                &gt_items,
                index.ids.len(),
                |a: &Segment, b: &Segment| a.iou::<T>(b),
                |a: &Segment, b: &Segment| a.cmp(b),
                alpha,
                opts.ap_mode,
            );
            EvalReport::new(MetricKind::Temporal, alpha.to_f64_lossy(), opts.ap_mode, table, &index)
        })
        .collect();
    let average_map = mean(per_alpha.iter().map(|r| r.map));
    Ok(TemporalReport { per_alpha, average_map })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArPoint {
    /// Proposals kept per video.
    pub budget: usize,
    pub average_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArReport {
    pub thresholds: Vec<f64>,
    /// AR with every proposal kept.
    pub average_recall: f64,
    pub curve: Vec<ArPoint>,
    pub num_gts: usize,
    pub num_videos: usize,
    pub num_proposals: usize,
}

pub const DEFAULT_AR_BUDGET: usize = 100;

/// Average recall of class-agnostic proposals over `thresholds`.
///
/// A ground-truth segment counts as recalled at a threshold when any
/// proposal of its video reaches that temporal IoU. The curve repeats the
/// computation keeping only the top `n` proposals per video, for
/// `n = 1..=max_budget`; recall is pooled over all ground truth.
pub fn average_recall<T: Scalar>(
    proposals: &[LabeledSegment<T>],
    gts: &[VideoAnnotation<T>],
    thresholds: &[T],
    max_budget: usize,
) -> Result<ArReport, MetricsError> {
    if thresholds.is_empty() {
        return Err(MetricsError::NoThresholds);
    }
    let index = VideoIndex::new(gts)?;
    let mut per_video: Vec<Vec<(T, Segment)>> = vec![Vec::new(); index.ids.len()];
    for p in proposals {
        per_video[index.get(&p.video_id)?].push((p.score, p.segment));
    }
    for props in &mut per_video {
        props.sort_by(|a, b| cmp_desc(&a.0, &b.0).then(a.1.cmp(&b.1)));
    }

    // earliest rank reaching each threshold, per (gt, threshold)
    let mut first_hit: Vec<Option<usize>> = Vec::new();
    let mut num_gts = 0usize;
    for v in gts {
        let props = &per_video[index.get(&v.meta.video_id)?];
        for t in &v.tubes {
            num_gts += 1;
            let seg = t.segment();
            for &thr in thresholds {
                first_hit.push(props.iter().position(|(_, p)| p.iou::<T>(&seg) >= thr));
            }
        }
    }

    let denom = num_gts * thresholds.len();
    let recall_at = |budget: Option<usize>| -> f64 {
        if denom == 0 {
            return 0.0;
        }
        let hits = first_hit
            .iter()
            .filter(|h| matches!((h, budget), (Some(r), Some(b)) if *r < b) || matches!((h, budget), (Some(_), None)))
            .count();
        hits as f64 / denom as f64
    };
    let curve = (1..=max_budget)
        .map(|n| ArPoint {
            budget: n,
            average_recall: recall_at(Some(n)),
        })
        .collect();
    Ok(ArReport {
        thresholds: thresholds.iter().map(|t| t.to_f64_lossy()).collect(),
        average_recall: recall_at(None),
        curve,
        num_gts,
        num_videos: index.ids.len(),
        num_proposals: proposals.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::gts_as_detections;
    use crate::geometry::VideoMeta;
    use crate::scalar::Rational;

    fn seg(s: usize, e: usize) -> Segment {
        Segment::new(s, e).unwrap()
    }

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn video(id: &str, frames: usize, tubes: Vec<Tube>) -> VideoAnnotation {
        VideoAnnotation {
            meta: VideoMeta {
                video_id: id.into(),
                num_frames: frames,
                width: 100,
                height: 100,
                fps: 25.0,
            },
            tubes,
        }
    }

    fn mr(flags: &[bool], num_gts: usize) -> MatchResult {
        MatchResult {
            outcomes: flags.iter().enumerate().map(|(i, &f)| f.then_some(i)).collect(),
            num_gts,
        }
    }

    #[test]
    fn matching_examples() {
        let none: [f64; 0] = [];
        let m = match_greedy(&none, &[0.0, 1.0], |_, _| 1.0, 0.5);
        assert_eq!(m.true_positives(), 0);
        assert_eq!(m.num_gts, 2);

        let m = match_greedy(&[0.6], &[()], |&o, _| o, 0.5);
        assert_eq!(m.outcomes, vec![Some(0)]);

        let m = match_greedy(&[0.6, 0.7], &[()], |&o, _| o, 0.5);
        assert_eq!(m.outcomes, vec![Some(0), None]);
    }

    #[test]
    fn matching_falls_back_to_next_unmatched_gt() {
        // rows: detection overlaps with gt 0 and gt 1
        let dets = [[0.9, 0.6], [0.8, 0.2]];
        let m = match_greedy(&dets, &[0usize, 1], |d, &g| d[g], 0.5);
        assert_eq!(m.outcomes, vec![Some(0), None]);
        let dets = [[0.9, 0.6], [0.8, 0.7]];
        let m = match_greedy(&dets, &[0usize, 1], |d, &g| d[g], 0.5);
        assert_eq!(m.outcomes, vec![Some(0), Some(1)]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision::<f64>(&mr(&[true, true], 2), ApMode::AllPoint),
            Some(1.0)
        );
        assert_eq!(
            average_precision::<f64>(&mr(&[false, false], 1), ApMode::AllPoint),
            Some(0.0)
        );
        assert_eq!(
            average_precision::<Rational>(&mr(&[true, false, true], 2), ApMode::AllPoint),
            Some(Rational::new(5, 6))
        );
        assert_eq!(average_precision::<f64>(&mr(&[true], 0), ApMode::AllPoint), None);
        assert_eq!(average_precision::<f64>(&mr(&[], 3), ApMode::AllPoint), Some(0.0));
    }

    #[test]
    fn eleven_point_ap() {
        assert_eq!(
            average_precision::<f64>(&mr(&[true, true], 2), ApMode::ElevenPoint),
            Some(1.0)
        );
        // recall 1/2 at precision 1, recall 1 at precision 2/3:
        // 6 points (0..=0.5) at 1, 5 points at 2/3
        assert_eq!(
            average_precision::<Rational>(&mr(&[true, false, true], 2), ApMode::ElevenPoint),
            Some((Rational::from_integer(6) + Rational::new(10, 3)) / Rational::from_integer(11))
        );
    }

    #[test]
    fn video_map_self_and_disjoint() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let gts = vec![
            video(
                "a",
                30,
                vec![
                    Tube::constant(0, 1.0, seg(0, 10), b),
                    Tube::constant(1, 1.0, seg(5, 20), b),
                ],
            ),
            video("b", 30, vec![Tube::constant(1, 1.0, seg(3, 9), b)]),
        ];
        let dets = gts_as_detections(&gts);
        for alpha in [0.2, 0.5, 0.75, 0.95, 1.0] {
            let r = video_map(&dets, &gts, alpha, &EvalOptions::default()).unwrap();
            assert_eq!(r.map, 1.0);
        }
        let far: Vec<LabeledTube> = vec![LabeledTube::new("a", Tube::constant(0, 1.0, seg(20, 30), b))];
        let r = video_map(&far, &gts, 0.2, &EvalOptions::default()).unwrap();
        assert_eq!(r.map, 0.0);
        assert_eq!(r.per_video["a"].num_dets, 1);
    }

    #[test]
    fn unknown_video_is_named() {
        let gts = vec![video("a", 10, vec![])];
        let dets = vec![LabeledTube::new(
            "zzz",
            Tube::constant(0, 1.0, seg(0, 1), bx(0.0, 0.0, 1.0, 1.0)),
        )];
        assert_eq!(
            video_map(&dets, &gts, 0.5, &EvalOptions::default()),
            Err(MetricsError::UnknownVideo("zzz".into()))
        );
    }

    #[test]
    fn classes_without_gt_are_reported_but_excluded() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let gts = vec![video("a", 30, vec![Tube::constant(0, 1.0, seg(0, 10), b)])];
        let mut dets = gts_as_detections(&gts);
        dets.push(LabeledTube::new("a", Tube::constant(7, 0.3, seg(0, 10), b)));
        let r = video_map(&dets, &gts, 0.5, &EvalOptions::default()).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.per_class[&7].ap, None);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn frame_map_penalizes_extra_frames() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let gts = vec![video("a", 30, vec![Tube::constant(0, 1.0, seg(0, 4), b)])];
        assert_eq!(
            frame_map(&gts_as_detections(&gts), &gts, 0.5, &EvalOptions::default())
                .unwrap()
                .map,
            1.0
        );
        // trailing false positives do not change AP
        let long = vec![LabeledTube::new("a", Tube::constant(0, 0.9, seg(0, 6), b))];
        assert_eq!(frame_map(&long, &gts, 0.5, &EvalOptions::default()).unwrap().map, 1.0);
        // a tube starting two frames early: ties rank frames in order, so
        // the sequence is FP FP TP TP TP TP
        let gts_late = vec![video("a", 30, vec![Tube::constant(0, 1.0, seg(2, 6), b)])];
        let r = frame_map(&long, &gts_late, 0.5, &EvalOptions::default()).unwrap();
        // precisions at the hits 1/3, 2/4, 3/5, 4/6; the envelope is 4/6 throughout
        let want = 2.0 / 3.0;
        assert!((r.map - want).abs() < 1e-12);
        assert!(r.map < 1.0);
        assert_eq!(frame_map(&[], &gts, 0.5, &EvalOptions::default()).unwrap().map, 0.0);
    }

    #[test]
    fn frame_map_per_video_pooling() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let gts = vec![
            video("a", 10, vec![Tube::constant(0, 1.0, seg(0, 2), b)]),
            video("b", 10, vec![Tube::constant(0, 1.0, seg(0, 2), b)]),
        ];
        let dets = vec![LabeledTube::new("a", Tube::constant(0, 1.0, seg(0, 2), b))];
        let opts = EvalOptions {
            frame_pooling: FramePooling::PerVideo,
            ..Default::default()
        };
        let r = frame_map(&dets, &gts, 0.5, &opts).unwrap();
        assert_eq!(r.map, 0.5);
        let corpus = frame_map(&dets, &gts, 0.5, &EvalOptions::default()).unwrap();
        assert_eq!(corpus.map, 0.5);
    }

    #[test]
    fn temporal_map_examples() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let gts = vec![video("a", 30, vec![Tube::constant(0, 1.0, seg(5, 15), b)])];
        let alphas = default_temporal_alphas();
        let r = temporal_map(&gts_as_detections(&gts), &gts, &alphas, &EvalOptions::default()).unwrap();
        assert!(r.per_alpha.iter().all(|p| p.map == 1.0));
        assert_eq!(r.average_map, 1.0);

        let shifted = vec![LabeledTube::new("a", Tube::constant(0, 1.0, seg(0, 10), b))];
        let r = temporal_map(&shifted, &gts, &alphas, &EvalOptions::default()).unwrap();
        assert_eq!(r.average_map, 0.0);
        assert!(temporal_map::<f64>(&shifted, &gts, &[], &EvalOptions::default()).is_err());
    }

    #[test]
    fn temporal_map_deduplicates_segments() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let c = bx(50.0, 50.0, 60.0, 60.0);
        let gts = vec![video("a", 30, vec![Tube::constant(0, 1.0, seg(0, 10), b)])];
        let dets = vec![
            LabeledTube::new("a", Tube::constant(0, 0.4, seg(0, 10), b)),
            LabeledTube::new("a", Tube::constant(0, 0.9, seg(0, 10), c)),
        ];
        let r = temporal_map(&dets, &gts, &[0.5], &EvalOptions::default()).unwrap();
        assert_eq!(r.per_alpha[0].per_class[&0].num_dets, 1);
        assert_eq!(r.average_map, 1.0);
    }

    #[test]
    fn default_alphas() {
        let a = default_temporal_alphas();
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], 0.5);
        assert_eq!(a[4], 0.7);
        assert_eq!(a[9], 0.95);
    }

    fn proposal(id: &str, s: usize, e: usize, score: f64) -> LabeledSegment {
        LabeledSegment {
            video_id: id.into(),
            segment: seg(s, e),
            score,
        }
    }

    #[test]
    fn average_recall_examples() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let alphas = default_temporal_alphas();
        let gts = vec![video("a", 200, vec![Tube::constant(0, 1.0, seg(0, 100), b)])];

        let exact = [proposal("a", 0, 100, 0.5)];
        assert_eq!(average_recall(&exact, &gts, &alphas, 100).unwrap().average_recall, 1.0);

        // [0,72) vs [0,100): tIoU 0.72
        let partial = [proposal("a", 0, 72, 0.5)];
        let r = average_recall(&partial, &gts, &alphas, 100).unwrap();
        assert_eq!(r.average_recall, 0.5);

        let r = average_recall::<f64>(&[], &gts, &alphas, 100).unwrap();
        assert_eq!(r.average_recall, 0.0);
    }

    #[test]
    fn average_recall_curve_respects_budget() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let gts = vec![video("a", 200, vec![Tube::constant(0, 1.0, seg(0, 100), b)])];
        let props = [proposal("a", 150, 160, 0.9), proposal("a", 0, 100, 0.1)];
        let r = average_recall(&props, &gts, &[0.5], 3).unwrap();
        let curve: Vec<f64> = r.curve.iter().map(|p| p.average_recall).collect();
        assert_eq!(curve, vec![0.0, 1.0, 1.0]);
        assert_eq!(r.average_recall, 1.0);
    }
}
