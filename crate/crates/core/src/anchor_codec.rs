//! Spatial and temporal anchors, regression-target encoding, anchor label
//! assignment and ground-truth-to-featuremap mapping.
//!
//! Deltas use the center/log-size parametrization:
//!
//! ```text
//! tx = (gx - ax) / aw    ty = (gy - ay) / ah    tw = ln(gw / aw)    th = ln(gh / ah)
//! tc = (gc - ac) / al    tl = ln(gl / al)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Segment, Tube};
use crate::scalar::{Real, Scalar};

/// Spatial downsampling between frame pixels and the feature grid.
pub const SPATIAL_STRIDE: usize = 16;
/// Temporal downsampling between frames and feature maps.
pub const TEMPORAL_STRIDE: usize = 8;

pub const DEFAULT_SCALES: [f64; 4] = [2.0, 4.0, 8.0, 16.0];
pub const DEFAULT_ASPECT_RATIOS: [f64; 5] = [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnchorError {
    #[error("anchor grid must be at least 1x1, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("anchor scales and aspect ratios must be non-empty and strictly positive")]
    BadShape,
    #[error("positive IoU {pos} must exceed negative IoU {neg}")]
    BadThresholds { pos: f64, neg: f64 },
}

/// Anchor layout over the `H/16 x W/16` feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAnchorGrid<T = f64> {
    feature_width: usize,
    feature_height: usize,
    stride: usize,
    base_size: T,
    scales: Vec<T>,
    aspect_ratios: Vec<T>,
}

impl<T: Real> SpatialAnchorGrid<T> {
    pub fn new(
        feature_width: usize,
        feature_height: usize,
        scales: Vec<T>,
        aspect_ratios: Vec<T>,
    ) -> Result<Self, AnchorError> {
        if feature_width == 0 || feature_height == 0 {
            return Err(AnchorError::EmptyGrid {
                width: feature_width,
                height: feature_height,
            });
        }
        let positive = |v: &Vec<T>| !v.is_empty() && v.iter().all(|&s| s > T::zero() && s.is_finite());
        if !positive(&scales) || !positive(&aspect_ratios) {
            return Err(AnchorError::BadShape);
        }
        Ok(Self {
            feature_width,
            feature_height,
            stride: SPATIAL_STRIDE,
            base_size: T::from_count(SPATIAL_STRIDE),
            scales,
            aspect_ratios,
        })
    }

    /// Grid for a `width x height` frame with the default 4 scales x 5 ratios.
    pub fn for_frame(width: u32, height: u32) -> Self {
        let cells = |px: u32| (px as usize / SPATIAL_STRIDE).max(1);
        Self::new(
            cells(width),
            cells(height),
            DEFAULT_SCALES.iter().map(|&s| T::from_f64_lossy(s)).collect(),
            DEFAULT_ASPECT_RATIOS.iter().map(|&r| T::from_f64_lossy(r)).collect(),
        )
        .expect("default anchor shape is valid")
    }

    pub fn with_base_size(mut self, base_size: T) -> Self {
        self.base_size = base_size;
        self
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn feature_height(&self) -> usize {
        self.feature_height
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (T, T) {
        let half = T::one() / T::two();
        let s = T::from_count(self.stride);
        ((T::from_count(col) + half) * s, (T::from_count(row) + half) * s)
    }

    /// Anchor shapes `(w, h)` shared by every cell; ratio is `h / w`.
    pub fn shapes(&self) -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(self.anchors_per_cell());
        for &scale in &self.scales {
            let side = self.base_size * scale;
            for &ratio in &self.aspect_ratios {
                let r = ratio.sqrt();
                out.push((side / r, side * r));
            }
        }
        out
    }
}

/// Every anchor box in row-major cell order, then scale, then ratio.
/// Anchors may extend past the frame.
pub fn gen_spatial_anchors<T: Real>(grid: &SpatialAnchorGrid<T>) -> Vec<BBox<T>> {
    let shapes = grid.shapes();
    let mut out = Vec::with_capacity(grid.feature_width * grid.feature_height * shapes.len());
    for row in 0..grid.feature_height {
        for col in 0..grid.feature_width {
            let (cx, cy) = grid.cell_center(col, row);
            for &(w, h) in &shapes {
                out.push(BBox::from_center(cx, cy, w, h).expect("anchor sizes are positive"));
            }
        }
    }
    out
}

/// Temporal anchors over `T/8` feature positions. Scales are anchor lengths
/// in feature-map units.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalAnchorSet<T = f64> {
    num_positions: usize,
    stride: usize,
    scales: Vec<T>,
}

/// Continuous anchor segment (center and length in frames).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalAnchor<T = f64> {
    pub position: usize,
    pub center: T,
    pub length: T,
}

impl<T: Real> TemporalAnchorSet<T> {
    pub fn new(num_positions: usize, scales: Vec<T>) -> Result<Self, AnchorError> {
        if num_positions == 0 {
            return Err(AnchorError::EmptyGrid {
                width: num_positions,
                height: 1,
            });
        }
        if scales.is_empty() || scales.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
            return Err(AnchorError::BadShape);
        }
        Ok(Self {
            num_positions,
            stride: TEMPORAL_STRIDE,
            scales,
        })
    }

    /// `ceil(T / 8)` positions for a video of `num_frames` frames.
    pub fn for_video(num_frames: usize, scales: Vec<T>) -> Result<Self, AnchorError> {
        Self::new(num_frames.div_ceil(TEMPORAL_STRIDE), scales)
    }

    pub fn anchors(&self) -> Vec<TemporalAnchor<T>> {
        let stride = T::from_count(self.stride);
        let half = T::one() / T::two();
        (0..self.num_positions)
            .flat_map(|k| {
                self.scales.iter().map(move |&s| TemporalAnchor {
                    position: k,
                    center: (T::from_count(k) + half) * stride,
                    length: s * stride,
                })
            })
            .collect()
    }
}

impl<T: Real> TemporalAnchor<T> {
    /// Rounds to the frame grid and clips to `[0, num_frames)`.
    pub fn to_segment(&self, num_frames: usize) -> Option<Segment> {
        segment_from_center(self.center, self.length, num_frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDelta<T = f64> {
    pub tx: T,
    pub ty: T,
    pub tw: T,
    pub th: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentDelta<T = f64> {
    pub tc: T,
    pub tl: T,
}

pub fn encode_box<T: Real>(anchor: &BBox<T>, gt: &BBox<T>) -> BoxDelta<T> {
    let (ax, ay) = anchor.center();
    let (gx, gy) = gt.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    BoxDelta {
        tx: (gx - ax) / aw,
        ty: (gy - ay) / ah,
        tw: (gt.width() / aw).ln(),
        th: (gt.height() / ah).ln(),
    }
}

/// Inverse of [`encode_box`] without clipping, as raw `[x1, y1, x2, y2]`.
pub fn decode_box_raw<T: Real>(anchor: &BBox<T>, d: &BoxDelta<T>) -> [T; 4] {
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = ax + d.tx * aw;
    let cy = ay + d.ty * ah;
    let w = aw * d.tw.exp();
    let h = ah * d.th.exp();
    let two = T::two();
    [cx - w / two, cy - h / two, cx + w / two, cy + h / two]
}

/// Decodes and clips to the `width x height` frame. `None` when the clipped
/// box has no area; such boxes are discarded.
pub fn decode_box<T: Real>(anchor: &BBox<T>, d: &BoxDelta<T>, width: u32, height: u32) -> Option<BBox<T>> {
    let [x1, y1, x2, y2] = decode_box_raw(anchor, d);
    let w = T::from_count(width as usize);
    let h = T::from_count(height as usize);
    let clip = |v: T, hi: T| {
        if v.is_finite() {
            v.max(T::zero()).min(hi)
        } else {
            T::nan()
        }
    };
    BBox::new(clip(x1, w), clip(y1, h), clip(x2, w), clip(y2, h)).ok()
}

pub fn encode_segment<T: Real>(anchor: &Segment, gt: &Segment) -> SegmentDelta<T> {
    encode_segment_continuous(anchor.center(), T::from_count(anchor.len()), gt)
}

/// Encoding against a continuous anchor (e.g. a [`TemporalAnchor`]).
pub fn encode_segment_continuous<T: Real>(anchor_center: T, anchor_len: T, gt: &Segment) -> SegmentDelta<T> {
    let gc: T = gt.center();
    let gl = T::from_count(gt.len());
    SegmentDelta {
        tc: (gc - anchor_center) / anchor_len,
        tl: (gl / anchor_len).ln(),
    }
}

/// Decodes onto the frame grid, clipped to `[0, num_frames)`. `None` when
/// nothing is left.
pub fn decode_segment<T: Real>(anchor: &Segment, d: &SegmentDelta<T>, num_frames: usize) -> Option<Segment> {
    decode_segment_continuous(anchor.center(), T::from_count(anchor.len()), d, num_frames)
}

pub fn decode_segment_continuous<T: Real>(
    anchor_center: T,
    anchor_len: T,
    d: &SegmentDelta<T>,
    num_frames: usize,
) -> Option<Segment> {
    let center = anchor_center + d.tc * anchor_len;
    let length = anchor_len * d.tl.exp();
    segment_from_center(center, length, num_frames)
}

fn segment_from_center<T: Real>(center: T, length: T, num_frames: usize) -> Option<Segment> {
    let two = T::two();
    let lo = (center - length / two).round();
    let hi = (center + length / two).round();
    if !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    let limit = T::from_count(num_frames);
    let start = lo.max(T::zero()).min(limit).to_usize()?;
    let end = hi.max(T::zero()).min(limit).to_usize()?;
    Segment::new(start, end).ok()
}

/// Training label of one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive(usize),
    Negative,
    Ignore,
}

/// Standard two-threshold assignment:
///
/// * positive for GT `g` if IoU ≥ `pos_iou` (best GT wins) or if the anchor
///   is `g`'s highest-IoU anchor (lowest index on ties, IoU must be > 0);
/// * negative if its best IoU is below `neg_iou`;
/// * ignored otherwise.
pub fn assign_anchor_labels<A, G, T, F>(
    anchors: &[A],
    gts: &[G],
    iou: F,
    pos_iou: T,
    neg_iou: T,
) -> Result<Vec<AnchorLabel>, AnchorError>
where
    T: Scalar,
    F: Fn(&A, &G) -> T,
{
    if !(pos_iou > neg_iou) {
        return Err(AnchorError::BadThresholds {
            pos: pos_iou.to_f64_lossy(),
            neg: neg_iou.to_f64_lossy(),
        });
    }
    let overlaps: Vec<Vec<T>> = anchors
        .iter()
        .map(|a| gts.iter().map(|g| iou(a, g)).collect())
        .collect();

    let mut labels: Vec<AnchorLabel> = overlaps
        .iter()
        .map(|row| match best(row.iter().copied()) {
            Some((g, v)) if v >= pos_iou => AnchorLabel::Positive(g),
            Some((_, v)) if v >= neg_iou => AnchorLabel::Ignore,
            _ => AnchorLabel::Negative,
        })
        .collect();

    // best anchor per GT; an anchor that is best for several GTs keeps the
    // one it overlaps most
    let mut forced: Vec<Option<(usize, T)>> = vec![None; anchors.len()];
    for g in 0..gts.len() {
        if let Some((a, v)) = best(overlaps.iter().map(|row| row[g])) {
            if v > T::zero() {
                match forced[a] {
                    Some((_, prev)) if prev >= v => {}
                    _ => forced[a] = Some((g, v)),
                }
            }
        }
    }
    for (label, force) in labels.iter_mut().zip(forced) {
        if let Some((g, _)) = force {
            if !matches!(label, AnchorLabel::Positive(_)) {
                *label = AnchorLabel::Positive(g);
            }
        }
    }
    Ok(labels)
}

/// First index of the maximum value.
fn best<T: Scalar>(values: impl Iterator<Item = T>) -> Option<(usize, T)> {
    values.enumerate().fold(None, |acc, (i, v)| match acc {
        Some((_, bv)) if bv >= v => acc,
        _ => Some((i, v)),
    })
}

/// Temporal center of feature map `k`: the middle of its 8-frame stride.
pub fn featuremap_center(k: usize) -> f64 {
    (TEMPORAL_STRIDE * k) as f64 + (TEMPORAL_STRIDE as f64 - 1.0) / 2.0
}

/// Maps a ground-truth tube onto the `ceil(T/8)` temporal feature maps.
///
/// Map `k` receives the tube box at the frame nearest its center when that
/// center lies inside the tube; ties go to the earlier frame. Maps whose
/// center falls past the last frame are dropped.
pub fn map_gt_to_featuremaps<T: Scalar>(tube: &Tube<T>, num_frames: usize) -> Vec<(usize, BBox<T>)> {
    let seg = tube.segment();
    let last = num_frames.saturating_sub(1) as f64;
    (0..num_frames.div_ceil(TEMPORAL_STRIDE))
        .filter_map(|k| {
            let c = featuremap_center(k);
            if c > last || !(seg.start() as f64 <= c && c < seg.end() as f64) {
                return None;
            }
            let frame = nearest_frame(c, seg);
            tube.box_at(frame).map(|b| (k, *b))
        })
        .collect()
}

fn nearest_frame(center: f64, seg: Segment) -> usize {
    seg.frames()
        .fold(None::<(usize, f64)>, |acc, f| {
            let d = (f as f64 - center).abs();
            match acc {
                Some((_, bd)) if bd <= d => acc,
                _ => Some((f, d)),
            }
        })
        .map(|(f, _)| f)
        .expect("segment is non-empty")
}

/// Per-featuremap supervision for all ground-truth tubes of a video; maps
/// without any tube are absent.
pub fn map_gts_to_featuremaps<T: Scalar>(tubes: &[Tube<T>], num_frames: usize) -> Vec<(usize, Vec<BBox<T>>)> {
    let mut per_map: std::collections::BTreeMap<usize, Vec<BBox<T>>> = Default::default();
    for tube in tubes {
        for (k, b) in map_gt_to_featuremaps(tube, num_frames) {
            per_map.entry(k).or_default().push(b);
        }
    }
    per_map.into_iter().collect()
}
