//! Greedy non-maximum suppression and top-K selection.
//!
//! Candidates are ranked by descending score; equal scores fall back to
//! geometry (earlier start / smaller x1) and then to input position, so the
//! output never depends on hash order or platform.

use std::cmp::Ordering;

use crate::geometry::{BBox, Segment};
use crate::scalar::{cmp_asc, cmp_desc, Scalar};

/// Per-frame box with a class-agnostic actionness score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox<T = f64> {
    pub bbox: BBox<T>,
    pub score: T,
    pub frame: usize,
}

impl<T: Scalar> ScoredBox<T> {
    pub fn new(bbox: BBox<T>, score: T, frame: usize) -> Self {
        Self { bbox, score, frame }
    }
}

/// Scored temporal segment; `class_id` is `None` for class-agnostic proposals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSegment<T = f64> {
    pub segment: Segment,
    pub score: T,
    pub class_id: Option<u32>,
}

impl<T: Scalar> ScoredSegment<T> {
    pub fn new(segment: Segment, score: T, class_id: Option<u32>) -> Self {
        Self {
            segment,
            score,
            class_id,
        }
    }
}

/// Anything that can be ranked and suppressed.
pub trait Candidate<T: Scalar> {
    fn score(&self) -> T;

    /// Tie-break between equal scores: smaller sorts first.
    fn geometry_cmp(&self, other: &Self) -> Ordering;

    fn overlap(&self, other: &Self) -> T;

    /// Candidates only suppress others in the same group.
    fn same_group(&self, _other: &Self) -> bool {
        true
    }
}

impl<T: Scalar> Candidate<T> for ScoredBox<T> {
    fn score(&self) -> T {
        self.score
    }

    fn geometry_cmp(&self, other: &Self) -> Ordering {
        cmp_asc(&self.bbox.x1(), &other.bbox.x1()).then_with(|| cmp_asc(&self.bbox.y1(), &other.bbox.y1()))
    }

    fn overlap(&self, other: &Self) -> T {
        self.bbox.iou(&other.bbox)
    }

    fn same_group(&self, other: &Self) -> bool {
        self.frame == other.frame
    }
}

impl<T: Scalar> Candidate<T> for ScoredSegment<T> {
    fn score(&self) -> T {
        self.score
    }

    fn geometry_cmp(&self, other: &Self) -> Ordering {
        self.segment
            .start()
            .cmp(&other.segment.start())
            .then(self.segment.end().cmp(&other.segment.end()))
    }

    fn overlap(&self, other: &Self) -> T {
        self.segment.iou(&other.segment)
    }

    fn same_group(&self, other: &Self) -> bool {
        self.class_id == other.class_id
    }
}

/// Stable ranking: score descending, then geometry, then input order.
pub fn rank<T: Scalar, C: Candidate<T>>(candidates: &[C]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cmp_desc(&ca.score(), &cb.score()).then_with(|| ca.geometry_cmp(cb))
    });
    order
}

/// Greedy NMS. A candidate is dropped when it overlaps an already kept,
/// same-group candidate by strictly more than `threshold`.
pub fn nms<T: Scalar, C: Candidate<T> + Clone>(candidates: &[C], threshold: T) -> Vec<C> {
    let mut kept: Vec<&C> = Vec::new();
    for idx in rank(candidates) {
        let c = &candidates[idx];
        let suppressed = kept.iter().any(|k| k.same_group(c) && k.overlap(c) > threshold);
        if !suppressed {
            kept.push(c);
        }
    }
    kept.into_iter().cloned().collect()
}

pub fn nms_boxes<T: Scalar>(candidates: &[ScoredBox<T>], threshold: T) -> Vec<ScoredBox<T>> {
    nms(candidates, threshold)
}

/// Segment NMS; segments with a class id are only suppressed within their class.
pub fn nms_segments<T: Scalar>(candidates: &[ScoredSegment<T>], threshold: T) -> Vec<ScoredSegment<T>> {
    nms(candidates, threshold)
}

/// The `k` best candidates in rank order.
pub fn top_k<T: Scalar, C: Candidate<T> + Clone>(candidates: &[C], k: usize) -> Vec<C> {
    rank(candidates)
        .into_iter()
        .take(k)
        .map(|i| candidates[i].clone())
        .collect()
}
