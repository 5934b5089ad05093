//! Test-time tube construction from classified temporal proposals and
//! per-frame scored boxes.
//!
//! Linking starts at the first frame of a proposal with the highest-actionness
//! box and greedily follows the maximum-IoU box frame by frame. The tube
//! score is the classification score plus the mean actionness of the chosen
//! boxes.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Segment, Tube};
use crate::scalar::{cmp_asc, cmp_desc, Scalar};
use crate::suppression::{nms, nms_boxes, top_k, Candidate, ScoredBox, ScoredSegment};

/// Scored boxes of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections<T = f64> {
    pub frame: usize,
    pub boxes: Vec<ScoredBox<T>>,
}

impl<T: Scalar> FrameDetections<T> {
    pub fn new(frame: usize, boxes: Vec<ScoredBox<T>>) -> Self {
        debug_assert!(boxes.iter().all(|b| b.frame == frame));
        Self { frame, boxes }
    }
}

/// Frame index to detections, for one video.
pub type FrameMap<T = f64> = BTreeMap<usize, FrameDetections<T>>;

/// Temporal proposal after classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedProposal<T = f64> {
    pub segment: Segment,
    pub class_id: u32,
    pub cls_score: T,
}

/// What to put on frames of a proposal that have no detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyFramePolicy {
    /// Repeat the previous frame's box.
    #[default]
    CarryForward,
    /// Blend corner-wise between the boxes around the gap; trailing gaps
    /// carry forward.
    Interpolate,
}

/// How the box on a tube frame was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxOrigin {
    Detected,
    /// Seeded from the latest frame before the proposal.
    SeededBefore(usize),
    CarriedForward,
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkedBox<T = f64> {
    pub frame: usize,
    pub bbox: BBox<T>,
    pub actionness: T,
    pub origin: BoxOrigin,
}

/// A linked tube with per-frame provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedTube<T = f64> {
    pub tube: Tube<T>,
    pub path: Vec<LinkedBox<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("no detections at frame {frame} or any earlier frame")]
    NoSeed { frame: usize },
}

/// `cls_score + mean(box_scores)`; `None` for an empty list.
pub fn score_tube<T: Scalar>(cls_score: T, box_scores: &[T]) -> Option<T> {
    if box_scores.is_empty() {
        return None;
    }
    let sum = box_scores.iter().fold(T::zero(), |acc, &s| acc + s);
    Some(cls_score + sum / T::from_count(box_scores.len()))
}

/// Higher actionness, then smaller x1, then smaller y1.
fn seed_order<T: Scalar>(a: &ScoredBox<T>, b: &ScoredBox<T>) -> Ordering {
    cmp_desc(&a.score, &b.score)
        .then_with(|| cmp_asc(&a.bbox.x1(), &b.bbox.x1()))
        .then_with(|| cmp_asc(&a.bbox.y1(), &b.bbox.y1()))
}

fn best_by<T: Scalar>(
    boxes: &[ScoredBox<T>],
    mut cmp: impl FnMut(&ScoredBox<T>, &ScoredBox<T>) -> Ordering,
) -> Option<&ScoredBox<T>> {
    boxes.iter().fold(None, |acc, b| match acc {
        Some(cur) if cmp(cur, b) != Ordering::Greater => Some(cur),
        _ => Some(b),
    })
}

/// Candidate maximizing IoU with `prev`; ties by [`seed_order`].
pub fn pick_successor<'a, T: Scalar>(prev: &BBox<T>, candidates: &'a [ScoredBox<T>]) -> Option<&'a ScoredBox<T>> {
    best_by(candidates, |a, b| {
        cmp_desc(&a.bbox.iou(prev), &b.bbox.iou(prev)).then_with(|| seed_order(a, b))
    })
}

fn frame_boxes<T: Scalar>(frames: &FrameMap<T>, frame: usize) -> &[ScoredBox<T>] {
    frames.get(&frame).map_or(&[], |d| d.boxes.as_slice())
}

/// Links one proposal into a tube.
pub fn link_tube<T: Scalar>(
    proposal: &ClassifiedProposal<T>,
    frames: &FrameMap<T>,
    policy: EmptyFramePolicy,
) -> Result<LinkedTube<T>, LinkError> {
    let seg = proposal.segment;
    let mut path: Vec<LinkedBox<T>> = Vec::with_capacity(seg.len());

    for frame in seg.frames() {
        let candidates = frame_boxes(frames, frame);
        let chosen = match path.last() {
            None => match best_by(candidates, seed_order) {
                Some(b) => LinkedBox {
                    frame,
                    bbox: b.bbox,
                    actionness: b.score,
                    origin: BoxOrigin::Detected,
                },
                None => {
                    let (from, b) = frames
                        .range(..frame)
                        .rev()
                        .find_map(|(&f, d)| best_by(&d.boxes, seed_order).map(|b| (f, b)))
                        .ok_or(LinkError::NoSeed { frame })?;
                    LinkedBox {
                        frame,
                        bbox: b.bbox,
                        actionness: b.score,
                        origin: BoxOrigin::SeededBefore(from),
                    }
                }
            },
            Some(prev) => match pick_successor(&prev.bbox, candidates) {
                Some(b) => LinkedBox {
                    frame,
                    bbox: b.bbox,
                    actionness: b.score,
                    origin: BoxOrigin::Detected,
                },
                None => LinkedBox {
                    frame,
                    origin: BoxOrigin::CarriedForward,
                    ..*prev
                },
            },
        };
        path.push(chosen);
    }

    if policy == EmptyFramePolicy::Interpolate {
        interpolate_gaps(&mut path);
    }

    let scores: Vec<T> = path.iter().map(|p| p.actionness).collect();
    let score = score_tube(proposal.cls_score, &scores).expect("segment is non-empty");
    let boxes = path.iter().map(|p| p.bbox).collect();
    let tube = Tube::new(proposal.class_id, score, seg, boxes).expect("one box per frame");
    Ok(LinkedTube { tube, path })
}

/// Replaces carried-forward runs that are closed by a detection on both
/// sides with a linear blend of the two bounding boxes and scores.
fn interpolate_gaps<T: Scalar>(path: &mut [LinkedBox<T>]) {
    let mut i = 0;
    while i < path.len() {
        if path[i].origin != BoxOrigin::CarriedForward || i == 0 {
            i += 1;
            continue;
        }
        let left = i - 1;
        let mut right = i;
        while right < path.len() && path[right].origin == BoxOrigin::CarriedForward {
            right += 1;
        }
        if right < path.len() {
            let span = right - left;
            let (a, b) = (path[left], path[right]);
            for (step, slot) in path[left + 1..right].iter_mut().enumerate() {
                let t = T::ratio(step + 1, span);
                slot.bbox = a.bbox.lerp(&b.bbox, t);
                slot.actionness = a.actionness * (T::one() - t) + b.actionness * t;
                slot.origin = BoxOrigin::Interpolated;
            }
        }
        i = right;
    }
}

/// Inference settings for [`build_detections`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Apply NMS and top-K inside `build_detections`.
    pub suppress: bool,
    pub temporal_top_k: usize,
    pub spatial_top_k: usize,
    pub temporal_nms: f64,
    pub spatial_nms: f64,
    pub empty_frame_policy: EmptyFramePolicy,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            suppress: true,
            temporal_top_k: 300,
            spatial_top_k: 50,
            temporal_nms: 0.4,
            spatial_nms: 0.2,
            empty_frame_policy: EmptyFramePolicy::CarryForward,
        }
    }
}

/// Why a proposal produced no tube.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDiagnostic {
    pub proposal_index: usize,
    pub segment: Segment,
    pub class_id: u32,
    pub error: LinkError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutput<T = f64> {
    pub tubes: Vec<Tube<T>>,
    pub diagnostics: Vec<LinkDiagnostic>,
}

/// Proposal tagged with its input position.
#[derive(Debug, Clone, Copy)]
struct Indexed<T> {
    seg: ScoredSegment<T>,
    index: usize,
}

impl<T: Scalar> Candidate<T> for Indexed<T> {
    fn score(&self) -> T {
        self.seg.score
    }
    fn geometry_cmp(&self, other: &Self) -> Ordering {
        self.seg.geometry_cmp(&other.seg)
    }
    fn overlap(&self, other: &Self) -> T {
        self.seg.overlap(&other.seg)
    }
    fn same_group(&self, other: &Self) -> bool {
        self.seg.same_group(&other.seg)
    }
}

/// Per-class temporal NMS + top-K over proposals; returns surviving indices
/// in rank order.
pub fn suppress_proposals<T: Scalar>(proposals: &[ClassifiedProposal<T>], cfg: &LinkConfig) -> Vec<usize> {
    let tagged: Vec<Indexed<T>> = proposals
        .iter()
        .enumerate()
        .map(|(index, p)| Indexed {
            seg: ScoredSegment::new(p.segment, p.cls_score, Some(p.class_id)),
            index,
        })
        .collect();
    let kept = nms(&tagged, T::from_f64_lossy(cfg.temporal_nms));
    top_k(&kept, cfg.temporal_top_k).into_iter().map(|c| c.index).collect()
}

/// Per-frame spatial NMS + top-K.
pub fn suppress_frames<T: Scalar>(frames: &FrameMap<T>, cfg: &LinkConfig) -> FrameMap<T> {
    let thr = T::from_f64_lossy(cfg.spatial_nms);
    frames
        .iter()
        .map(|(&f, d)| {
            let kept = top_k(&nms_boxes(&d.boxes, thr), cfg.spatial_top_k);
            (f, FrameDetections { frame: f, boxes: kept })
        })
        .collect()
}

/// Full inference for one video: optional suppression, linking of every
/// surviving proposal, ordering by descending tube score.
pub fn build_detections<T: Scalar>(
    proposals: &[ClassifiedProposal<T>],
    frames: &FrameMap<T>,
    cfg: &LinkConfig,
) -> LinkOutput<T> {
    let (indices, suppressed);
    let frames = if cfg.suppress {
        indices = suppress_proposals(proposals, cfg);
        suppressed = suppress_frames(frames, cfg);
        &suppressed
    } else {
        indices = (0..proposals.len()).collect();
        frames
    };

    let results: Vec<(usize, Result<LinkedTube<T>, LinkError>)> = indices
        .par_iter()
        .map(|&i| (i, link_tube(&proposals[i], frames, cfg.empty_frame_policy)))
        .collect();

    let mut tubes: Vec<(usize, Tube<T>)> = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, r) in results {
        match r {
            Ok(linked) => tubes.push((i, linked.tube)),
            Err(error) => diagnostics.push(LinkDiagnostic {
                proposal_index: i,
                segment: proposals[i].segment,
                class_id: proposals[i].class_id,
                error,
            }),
        }
    }
    tubes.sort_by(|(ia, a), (ib, b)| {
        cmp_desc(&a.score(), &b.score())
            .then(a.segment().cmp(&b.segment()))
            .then(a.class_id().cmp(&b.class_id()))
            .then(ia.cmp(ib))
    });
    diagnostics.sort_by_key(|d| d.proposal_index);
    LinkOutput {
        tubes: tubes.into_iter().map(|(_, t)| t).collect(),
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn frames_of(entries: Vec<(usize, Vec<(BBox, f64)>)>) -> FrameMap {
        entries
            .into_iter()
            .map(|(f, bs)| {
                let boxes = bs.into_iter().map(|(bx, s)| ScoredBox::new(bx, s, f)).collect();
                (f, FrameDetections::new(f, boxes))
            })
            .collect()
    }

    fn proposal(s: usize, e: usize, cls: f64) -> ClassifiedProposal {
        ClassifiedProposal {
            segment: Segment::new(s, e).unwrap(),
            class_id: 1,
            cls_score: cls,
        }
    }

    #[test]
    fn score_examples() {
        assert!((score_tube::<f64>(0.8, &[0.5, 0.7]).unwrap() - 1.4).abs() < 1e-12);
        assert_eq!(score_tube(0.0, &[0.0]), Some(0.0));
        assert!((score_tube::<f64>(0.3, &[1.0, 0.0, 0.5]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(score_tube::<f64>(0.3, &[]), None);
    }

    #[test]
    fn single_box_per_frame_is_taken_verbatim() {
        let seq: Vec<BBox> = (0..4).map(|i| b(i as f64, 0.0, i as f64 + 5.0, 5.0)).collect();
        let frames = frames_of(seq.iter().enumerate().map(|(f, &bx)| (f, vec![(bx, 0.5)])).collect());
        let linked = link_tube(&proposal(0, 4, 0.1), &frames, EmptyFramePolicy::CarryForward).unwrap();
        assert_eq!(linked.tube.boxes(), &seq[..]);
    }

    #[test]
    fn follows_max_iou_not_max_score() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let bb = b(30.0, 30.0, 40.0, 40.0);
        // IoU(A, A') = 0.7: 10x10 boxes sharing an 8.235.. wide strip
        let shift = 10.0 - 2.0 * 100.0 * 0.7 / (1.7 * 10.0);
        let a2 = b(shift, 0.0, 10.0 + shift, 10.0);
        assert!((a.iou(&a2) - 0.7).abs() < 1e-9);
        let c = b(50.0, 50.0, 60.0, 60.0);
        let frames = frames_of(vec![(5, vec![(a, 0.9), (bb, 0.8)]), (6, vec![(a2, 0.3), (c, 0.95)])]);
        let linked = link_tube(&proposal(5, 7, 0.5), &frames, EmptyFramePolicy::CarryForward).unwrap();
        assert_eq!(linked.tube.boxes(), &[a, a2]);
        assert!((linked.tube.score() - (0.5 + 0.6)).abs() < 1e-12);
    }

    #[test]
    fn empty_middle_frame_carries_forward() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let frames = frames_of(vec![(0, vec![(a, 0.6)]), (2, vec![(a, 0.6)])]);
        let linked = link_tube(&proposal(0, 3, 0.0), &frames, EmptyFramePolicy::CarryForward).unwrap();
        assert_eq!(linked.tube.boxes(), &[a, a, a]);
        assert_eq!(linked.path[1].origin, BoxOrigin::CarriedForward);
        assert!((linked.tube.score() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn interpolation_fills_closed_gaps() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let c = b(4.0, 0.0, 14.0, 10.0);
        let frames = frames_of(vec![(0, vec![(a, 0.2)]), (4, vec![(c, 0.6)])]);
        let linked = link_tube(&proposal(0, 6, 0.0), &frames, EmptyFramePolicy::Interpolate).unwrap();
        let xs: Vec<f64> = linked.tube.boxes().iter().map(|bx| bx.x1()).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
        assert_eq!(linked.path[5].origin, BoxOrigin::CarriedForward);
        assert!((linked.path[2].actionness - 0.4).abs() < 1e-12);
    }

    #[test]
    fn seed_falls_back_to_earlier_frames() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let frames = frames_of(vec![(1, vec![(a, 0.4)])]);
        let linked = link_tube(&proposal(3, 5, 0.0), &frames, EmptyFramePolicy::CarryForward).unwrap();
        assert_eq!(linked.path[0].origin, BoxOrigin::SeededBefore(1));
        assert_eq!(
            link_tube(&proposal(0, 2, 0.0), &frames, EmptyFramePolicy::CarryForward),
            Err(LinkError::NoSeed { frame: 0 })
        );
    }

    #[test]
    fn equal_iou_prefers_score_then_left() {
        let prev = b(0.0, 0.0, 10.0, 10.0);
        let l = ScoredBox::new(b(-5.0, 0.0, 5.0, 10.0), 0.5, 0);
        let r = ScoredBox::new(b(5.0, 0.0, 15.0, 10.0), 0.5, 0);
        assert_eq!(pick_successor(&prev, &[r, l]), Some(&l));
        let r_hi = ScoredBox { score: 0.6, ..r };
        assert_eq!(pick_successor(&prev, &[l, r_hi]), Some(&r_hi));
    }

    #[test]
    fn build_examples() {
        let cfg = LinkConfig::default();
        let frames = frames_of((0..10).map(|f| (f, vec![(b(0.0, 0.0, 10.0, 10.0), 0.5)])).collect());
        assert!(build_detections::<f64>(&[], &frames, &cfg).tubes.is_empty());

        let out = build_detections(&[proposal(0, 10, 0.7)], &frames, &cfg);
        assert_eq!(out.tubes.len(), 1);
        assert!((out.tubes[0].score() - 1.2).abs() < 1e-12);

        // [0,10) vs [2,10): IoU 0.8 > 0.4, same class
        let out = build_detections(&[proposal(0, 10, 0.7), proposal(2, 10, 0.6)], &frames, &cfg);
        assert_eq!(out.tubes.len(), 1);
        assert_eq!(out.tubes[0].segment(), Segment::new(0, 10).unwrap());

        let raw = LinkConfig { suppress: false, ..cfg };
        let out = build_detections(&[proposal(0, 10, 0.7), proposal(2, 10, 0.6)], &frames, &raw);
        assert_eq!(out.tubes.len(), 2);
    }

    #[test]
    fn rejected_links_become_diagnostics() {
        let frames = frames_of(vec![(20, vec![(b(0.0, 0.0, 1.0, 1.0), 0.5)])]);
        let out = build_detections(
            &[proposal(0, 5, 0.5), proposal(20, 21, 0.4)],
            &frames,
            &LinkConfig::default(),
        );
        assert_eq!(out.tubes.len(), 1);
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].proposal_index, 0);
    }

    #[test]
    fn suppress_maps_back_to_input_indices() {
        let props = [proposal(0, 10, 0.2), proposal(50, 60, 0.9), proposal(1, 10, 0.5)];
        assert_eq!(suppress_proposals(&props, &LinkConfig::default()), vec![1, 2]);
    }
}
