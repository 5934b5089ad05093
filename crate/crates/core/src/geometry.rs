//! Boxes, segments, tubes and the IoU arithmetic between them.
//!
//! Boxes use the continuous convention: `area = (x2 - x1) * (y2 - y1)`, no
//! `+1`. Segments are half-open frame intervals `[start, end)`, so abutting
//! segments never overlap.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate box ({x1:?}, {y1:?}, {x2:?}, {y2:?}): need x2 > x1 and y2 > y1")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box coordinate is not finite")]
    NonFiniteBox,
    #[error("invalid segment [{start}, {end}): need start < end")]
    EmptySegment { start: usize, end: usize },
    #[error("tube over {frames} frames carries {boxes} boxes")]
    TubeLength { frames: usize, boxes: usize },
    #[error("union of an empty box list")]
    EmptyUnion,
}

/// Axis-aligned rectangle in pixel coordinates with `x2 > x1`, `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T = f64> {
    x1: T,
    y1: T,
    x2: T,
    y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite_value()) {
            return Err(GeometryError::NonFiniteBox);
        }
        if !(x2 > x1 && y2 > y1) {
            return Err(GeometryError::DegenerateBox {
                x1: x1.to_f64_lossy(),
                y1: y1.to_f64_lossy(),
                x2: x2.to_f64_lossy(),
                y2: y2.to_f64_lossy(),
            });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from its center and size.
    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Result<Self, GeometryError> {
        let two = T::two();
        Self::new(cx - w / two, cy - h / two, cx + w / two, cy + h / two)
    }

    pub fn x1(&self) -> T {
        self.x1
    }
    pub fn y1(&self) -> T {
        self.y1
    }
    pub fn x2(&self) -> T {
        self.x2
    }
    pub fn y2(&self) -> T {
        self.y2
    }

    pub fn coords(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (T, T) {
        let two = T::two();
        ((self.x1 + self.x2) / two, (self.y1 + self.y2) / two)
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    /// Area of the overlap; zero when the boxes only touch or are disjoint.
    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x2.min_of(other.x2) - self.x1.max_of(other.x1);
        let h = self.y2.min_of(other.y2) - self.y1.max_of(other.y1);
        if w > T::zero() && h > T::zero() {
            w * h
        } else {
            T::zero()
        }
    }

    pub fn iou(&self, other: &Self) -> T {
        if self == other {
            return T::one();
        }
        let inter = self.intersection_area(other);
        if inter == T::zero() {
            return T::zero();
        }
        inter / (self.area() + other.area() - inter)
    }

    pub fn contains(&self, other: &Self) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    /// Clips to `[0, width] x [0, height]`. `None` if nothing with positive
    /// area is left.
    pub fn clip(&self, width: T, height: T) -> Option<Self> {
        let z = T::zero();
        let x1 = self.x1.max_of(z).min_of(width);
        let y1 = self.y1.max_of(z).min_of(height);
        let x2 = self.x2.max_of(z).min_of(width);
        let y2 = self.y2.max_of(z).min_of(height);
        Self::new(x1, y1, x2, y2).ok()
    }

    /// Corner-wise linear blend: `self` at `t = 0`, `other` at `t = 1`.
    pub fn lerp(&self, other: &Self, t: T) -> Self {
        let one = T::one();
        let mix = |a: T, b: T| a * (one - t) + b * t;
        // Convex combination of two valid boxes stays valid.
        Self {
            x1: mix(self.x1, other.x1),
            y1: mix(self.y1, other.y1),
            x2: mix(self.x2, other.x2),
            y2: mix(self.y2, other.y2),
        }
    }

    /// Converts every coordinate to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Result<BBox<U>, GeometryError> {
        let conv = |v: T| U::from_f64_lossy(v.to_f64_lossy());
        BBox::new(conv(self.x1), conv(self.y1), conv(self.x2), conv(self.y2))
    }
}

pub fn box_area<T: Scalar>(b: &BBox<T>) -> T {
    b.area()
}

pub fn box_iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    a.iou(b)
}

/// Smallest box enclosing every input box.
pub fn union_box<T: Scalar>(boxes: &[BBox<T>]) -> Result<BBox<T>, GeometryError> {
    let (first, rest) = boxes.split_first().ok_or(GeometryError::EmptyUnion)?;
    Ok(rest.iter().fold(*first, |acc, b| BBox {
        x1: acc.x1.min_of(b.x1),
        y1: acc.y1.min_of(b.y1),
        x2: acc.x2.max_of(b.x2),
        y2: acc.y2.max_of(b.y2),
    }))
}

/// Half-open frame interval `[start, end)`, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawSegment", into = "RawSegment")]
pub struct Segment {
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSegment {
    start: usize,
    end: usize,
}

impl TryFrom<RawSegment> for Segment {
    type Error = GeometryError;
    fn try_from(raw: RawSegment) -> Result<Self, Self::Error> {
        Segment::new(raw.start, raw.end)
    }
}

impl From<Segment> for RawSegment {
    fn from(s: Segment) -> Self {
        RawSegment {
            start: s.start,
            end: s.end,
        }
    }
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self, GeometryError> {
        if start >= end {
            return Err(GeometryError::EmptySegment { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    /// Always `false`; segments hold at least one frame.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frames(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.start <= frame && frame < self.end
    }

    pub fn intersection(&self, other: &Segment) -> Option<Segment> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(Segment { start, end })
    }

    pub fn intersection_len(&self, other: &Segment) -> usize {
        self.intersection(other).map_or(0, |s| s.len())
    }

    pub fn union_len(&self, other: &Segment) -> usize {
        self.len() + other.len() - self.intersection_len(other)
    }

    pub fn iou<T: Scalar>(&self, other: &Segment) -> T {
        let inter = self.intersection_len(other);
        if inter == 0 {
            return T::zero();
        }
        T::ratio(inter, self.union_len(other))
    }

    /// Midpoint `(start + end) / 2` in frame units.
    pub fn center<T: Scalar>(&self) -> T {
        T::ratio(self.start + self.end, 2)
    }
}

pub fn segment_iou<T: Scalar>(a: &Segment, b: &Segment) -> T {
    a.iou(b)
}

/// Class-labelled, scored sequence of boxes, one per frame of `segment`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube<T = f64> {
    class_id: u32,
    score: T,
    segment: Segment,
    boxes: Vec<BBox<T>>,
}

impl<T: Scalar> Tube<T> {
    pub fn new(class_id: u32, score: T, segment: Segment, boxes: Vec<BBox<T>>) -> Result<Self, GeometryError> {
        if boxes.len() != segment.len() {
            return Err(GeometryError::TubeLength {
                frames: segment.len(),
                boxes: boxes.len(),
            });
        }
        Ok(Self {
            class_id,
            score,
            segment,
            boxes,
        })
    }

    /// Tube holding the same box on every frame of `segment`.
    pub fn constant(class_id: u32, score: T, segment: Segment, bbox: BBox<T>) -> Self {
        Self {
            class_id,
            score,
            segment,
            boxes: vec![bbox; segment.len()],
        }
    }

    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    pub fn score(&self) -> T {
        self.score
    }

    pub fn segment(&self) -> Segment {
        self.segment
    }

    pub fn boxes(&self) -> &[BBox<T>] {
        &self.boxes
    }

    pub fn with_score(mut self, score: T) -> Self {
        self.score = score;
        self
    }

    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = class_id;
        self
    }

    /// Box at an absolute frame index, if the tube covers it.
    pub fn box_at(&self, frame: usize) -> Option<&BBox<T>> {
        self.segment
            .contains(frame)
            .then(|| &self.boxes[frame - self.segment.start])
    }

    /// `(frame, box)` pairs in frame order.
    pub fn frames(&self) -> impl Iterator<Item = (usize, &BBox<T>)> + '_ {
        self.segment.frames().zip(self.boxes.iter())
    }
}

/// Temporal IoU times the mean per-frame box IoU over co-present frames.
pub fn tube_st_iou<T: Scalar>(a: &Tube<T>, b: &Tube<T>) -> T {
    let Some(common) = a.segment.intersection(&b.segment) else {
        return T::zero();
    };
    let t_iou: T = a.segment.iou(&b.segment);
    let mut spatial = T::zero();
    for f in common.frames() {
        let ba = &a.boxes[f - a.segment.start];
        let bb = &b.boxes[f - b.segment.start];
        spatial = spatial + ba.iou(bb);
    }
    t_iou * (spatial / T::from_count(common.len()))
}

/// Per-video metadata: frame count `T`, resolution `W x H`, frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
}

impl VideoMeta {
    pub fn frame_area(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height)
    }

    /// Whether `seg` lies inside `[0, num_frames)`.
    pub fn covers(&self, seg: &Segment) -> bool {
        seg.end() <= self.num_frames
    }
}
