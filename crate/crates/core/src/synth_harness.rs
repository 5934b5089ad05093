//! Synthetic scenarios and brute-force oracles.
//!
//! [`generate_corpus`] draws ground-truth tubes with constant-velocity box
//! motion and derives detector outputs from them through a noise model.
//! Every random quantity is drawn regardless of the noise settings, so two
//! specs that differ only in noise magnitudes see the same underlying
//! draws (common random numbers) and their metrics can be compared per
//! seed.
//!
//! The oracles re-derive AP and IoU from their textual definitions and
//! share no code with `metrics` or `geometry` beyond the input types.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledTube, VideoAnnotation, VideoFrames, VideoProposals};
use crate::dataset_builder::{FrameObjectAnnotation, VideoRecord};
use crate::geometry::{BBox, Segment, Tube, VideoMeta};
use crate::metrics::ApMode;
use crate::scalar::Rational;
use crate::suppression::ScoredBox;
use crate::tube_linker::{ClassifiedProposal, FrameDetections, FrameMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("`{0}` must lie in [0, 1]")]
    RateOutOfRange(&'static str),
    #[error("`{0}` must be non-negative")]
    Negative(&'static str),
    #[error("`{0}` must be at least 1")]
    Zero(&'static str),
    #[error("box sizes must satisfy 1 <= min_size <= max_size <= frame side")]
    BadSize,
    #[error("duration ratios must satisfy 0 < min <= max <= 1")]
    BadDuration,
}

/// Ground-truth tube motion: box sides in pixels, speed in pixels per
/// frame, durations as fractions of the video length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionModel {
    pub min_size: f64,
    pub max_size: f64,
    pub max_speed: f64,
    pub min_duration: f64,
    pub max_duration: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self {
            min_size: 24.0,
            max_size: 96.0,
            max_speed: 2.0,
            min_duration: 0.2,
            max_duration: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Standard deviation of the per-corner coordinate jitter, in pixels.
    pub jitter_sigma: f64,
    /// Detection score is `1 - score_noise * u`, `u ~ U[0, 1)`.
    pub score_noise: f64,
    /// Chance, per ground-truth tube, of an extra false-positive tube; also
    /// the chance of a distractor box on each frame.
    pub fp_rate: f64,
    /// Chance that a ground-truth tube is missed.
    pub fn_rate: f64,
    /// Maximum shift of each segment boundary, in frames.
    pub boundary_jitter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub num_videos: usize,
    pub num_classes: u32,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    pub tubes_per_video: usize,
    pub motion: MotionModel,
    pub noise: NoiseModel,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_videos: 8,
            num_classes: 3,
            num_frames: 48,
            width: 320,
            height: 240,
            tubes_per_video: 2,
            motion: MotionModel::default(),
            noise: NoiseModel::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let n = &self.noise;
        for (name, v) in [
            ("fp_rate", n.fp_rate),
            ("fn_rate", n.fn_rate),
            ("score_noise", n.score_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SpecError::RateOutOfRange(name));
            }
        }
        if !(n.jitter_sigma >= 0.0) {
            return Err(SpecError::Negative("jitter_sigma"));
        }
        if !(self.motion.max_speed >= 0.0) {
            return Err(SpecError::Negative("max_speed"));
        }
        if self.num_classes == 0 {
            return Err(SpecError::Zero("num_classes"));
        }
        if self.num_frames == 0 {
            return Err(SpecError::Zero("num_frames"));
        }
        let m = &self.motion;
        let side = f64::from(self.width.min(self.height));
        if !(1.0 <= m.min_size && m.min_size <= m.max_size && m.max_size <= side) {
            return Err(SpecError::BadSize);
        }
        if !(0.0 < m.min_duration && m.min_duration <= m.max_duration && m.max_duration <= 1.0) {
            return Err(SpecError::BadDuration);
        }
        Ok(())
    }
}

/// Output of [`generate_corpus`], ordered by video id.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub gts: Vec<VideoAnnotation>,
    pub dets: Vec<LabeledTube>,
    pub frame_dets: Vec<VideoFrames>,
    pub proposals: Vec<VideoProposals>,
}

impl SynthCorpus {
    pub fn metas(&self) -> Vec<VideoMeta> {
        self.gts.iter().map(|v| v.meta.clone()).collect()
    }
}

pub fn synth_video_id(i: usize) -> String {
    format!("synth_{i:05}")
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Box with corners nudged by `sigma * z`; collapsed boxes are widened
/// to one pixel around their center.
fn jitter_box(b: &BBox, sigma: f64, z: [f64; 4]) -> BBox {
    let mut c = b.coords();
    for (v, dz) in c.iter_mut().zip(z) {
        *v += sigma * dz;
    }
    for (lo, hi) in [(0, 2), (1, 3)] {
        if c[hi] - c[lo] < 1.0 {
            let m = 0.5 * (c[lo] + c[hi]);
            c[lo] = m - 0.5;
            c[hi] = m + 0.5;
        }
    }
    BBox::new(c[0], c[1], c[2], c[3]).expect("jittered box is valid")
}

fn random_box(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> BBox {
    let (fw, fh) = (f64::from(spec.width), f64::from(spec.height));
    let w = uniform(rng, spec.motion.min_size, spec.motion.max_size);
    let h = uniform(rng, spec.motion.min_size, spec.motion.max_size);
    let x = uniform(rng, 0.0, fw - w);
    let y = uniform(rng, 0.0, fh - h);
    BBox::new(x, y, x + w, y + h).expect("positive size")
}

fn random_segment(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Segment {
    let t = spec.num_frames;
    let ratio = uniform(rng, spec.motion.min_duration, spec.motion.max_duration);
    let len = ((ratio * t as f64).round() as usize).clamp(1, t);
    let start = rng.random_range(0..=t - len);
    Segment::new(start, start + len).expect("len >= 1")
}

fn gt_tube(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Tube {
    let class = rng.random_range(0..spec.num_classes);
    let segment = random_segment(rng, spec);
    let first = random_box(rng, spec);
    let vx = uniform(rng, -spec.motion.max_speed, spec.motion.max_speed);
    let vy = uniform(rng, -spec.motion.max_speed, spec.motion.max_speed);

    let (fw, fh) = (f64::from(spec.width), f64::from(spec.height));
    let (w, h) = (first.width(), first.height());
    let boxes = (0..segment.len())
        .map(|k| {
            let x = (first.x1() + vx * k as f64).clamp(0.0, fw - w);
            let y = (first.y1() + vy * k as f64).clamp(0.0, fh - h);
            BBox::new(x, y, x + w, y + h).expect("positive size")
        })
        .collect();
    Tube::new(class, 1.0, segment, boxes).expect("one box per frame")
}

fn shift(v: usize, by: i64, max: usize) -> usize {
    (v as i64 + by).clamp(0, max as i64) as usize
}

/// Detection for one ground-truth tube, or `None` when missed.
fn detect(rng: &mut ChaCha8Rng, gt: &Tube, spec: &ScenarioSpec) -> Option<Tube> {
    let n = &spec.noise;
    let missed = rng.random::<f64>() < n.fn_rate;
    let u_score = rng.random::<f64>();
    let bj = n.boundary_jitter as i64;
    let ds = rng.random_range(-bj..=bj);
    let de = rng.random_range(-bj..=bj);

    let seg = gt.segment();
    let mut start = shift(seg.start(), ds, spec.num_frames - 1);
    let mut end = shift(seg.end(), de, spec.num_frames);
    if end <= start {
        (start, end) = (seg.start(), seg.end());
    }
    let boxes: Vec<BBox> = (start..end)
        .map(|f| {
            let held = f.clamp(seg.start(), seg.end() - 1);
            let z = [normal(rng), normal(rng), normal(rng), normal(rng)];
            jitter_box(gt.box_at(held).expect("inside segment"), n.jitter_sigma, z)
        })
        .collect();
    if missed {
        return None;
    }
    let score = 1.0 - n.score_noise * u_score;
    Some(
        Tube::new(
            gt.class_id(),
            score,
            Segment::new(start, end).expect("end > start"),
            boxes,
        )
        .expect("sizes match"),
    )
}

fn false_positive(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Option<Tube> {
    let hit = rng.random::<f64>() < spec.noise.fp_rate;
    let class = rng.random_range(0..spec.num_classes);
    let segment = random_segment(rng, spec);
    let bbox = random_box(rng, spec);
    let score = rng.random::<f64>();
    hit.then(|| Tube::constant(class, score, segment, bbox))
}

struct VideoDraw {
    gt: VideoAnnotation,
    dets: Vec<Tube>,
    frames: FrameMap,
}

fn generate_video(spec: &ScenarioSpec, i: usize) -> VideoDraw {
    let stream = 3 * i as u64;
    let mut gt_rng = rng_for(spec.seed, stream);
    let mut noise_rng = rng_for(spec.seed, stream + 1);
    let mut fp_rng = rng_for(spec.seed, stream + 2);

    let meta = VideoMeta {
        video_id: synth_video_id(i),
        num_frames: spec.num_frames,
        width: spec.width,
        height: spec.height,
        fps: 25.0,
    };
    let tubes: Vec<Tube> = (0..spec.tubes_per_video).map(|_| gt_tube(&mut gt_rng, spec)).collect();
    let mut dets = Vec::new();
    for t in &tubes {
        dets.extend(detect(&mut noise_rng, t, spec));
        dets.extend(false_positive(&mut fp_rng, spec));
    }

    let mut frames: FrameMap = BTreeMap::new();
    let mut push = |sb: ScoredBox| {
        frames
            .entry(sb.frame)
            .or_insert_with(|| FrameDetections::new(sb.frame, Vec::new()))
            .boxes
            .push(sb);
    };
    for d in &dets {
        for (f, b) in d.frames() {
            push(ScoredBox::new(*b, d.score(), f));
        }
    }
    for f in 0..spec.num_frames {
        let hit = fp_rng.random::<f64>() < spec.noise.fp_rate;
        let b = random_box(&mut fp_rng, spec);
        let score = 0.5 * fp_rng.random::<f64>();
        if hit {
            push(ScoredBox::new(b, score, f));
        }
    }
    VideoDraw {
        gt: VideoAnnotation { meta, tubes },
        dets,
        frames,
    }
}

/// Deterministic corpus for `spec`. A spec with a zero noise model yields
/// detections identical to the ground truth, all scored `1.0`.
pub fn generate_corpus(spec: &ScenarioSpec) -> Result<SynthCorpus, SpecError> {
    spec.validate()?;
    let videos: Vec<VideoDraw> = (0..spec.num_videos)
        .into_par_iter()
        .map(|i| generate_video(spec, i))
        .collect();

    let mut out = SynthCorpus {
        gts: Vec::with_capacity(videos.len()),
        dets: Vec::new(),
        frame_dets: Vec::with_capacity(videos.len()),
        proposals: Vec::with_capacity(videos.len()),
    };
    for v in videos {
        let id = v.gt.meta.video_id.clone();
        let proposals = v
            .dets
            .iter()
            .map(|d| ClassifiedProposal {
                segment: d.segment(),
                class_id: d.class_id(),
                cls_score: d.score(),
            })
            .collect();
        out.proposals.push(VideoProposals {
            video_id: id.clone(),
            proposals,
        });
        out.frame_dets.push(VideoFrames {
            video_id: id.clone(),
            frames: v.frames,
        });
        out.dets
            .extend(v.dets.into_iter().map(|t| LabeledTube::new(id.clone(), t)));
        out.gts.push(v.gt);
    }
    Ok(out)
}

/// One class of an annotation scenario: `videos` videos of which the first
/// `passing` are built to pass the default ratio filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPlan {
    pub label: String,
    pub videos: usize,
    pub passing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationSpec {
    pub seed: u64,
    pub num_frames: usize,
    pub width: u32,
    pub height: u32,
    /// Distance between annotated keyframes; frames in between are left
    /// for interpolation.
    pub keyframe_step: usize,
    pub classes: Vec<ClassPlan>,
}

impl Default for AnnotationSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_frames: 60,
            width: 320,
            height: 240,
            keyframe_step: 4,
            classes: Vec::new(),
        }
    }
}

/// Per-frame object annotations and video records for `spec`.
///
/// Passing videos get temporal ratios in `[0.3, 0.7]` and spatial ratios
/// in `[0.05, 0.5]`. Failing ones cycle through: too short (0.1), too long
/// (0.95), too small (0.003), too large (~0.9), and no relevant objects.
/// Each frame's relevant objects are two overlapping boxes whose union is
/// the target box; a third, irrelevant object sits elsewhere.
pub fn generate_annotation_corpus(spec: &AnnotationSpec) -> (Vec<FrameObjectAnnotation>, Vec<VideoRecord>) {
    let mut plan = Vec::new();
    for (c, class) in spec.classes.iter().enumerate() {
        for j in 0..class.videos {
            plan.push((c, j));
        }
    }
    let per_video: Vec<(Vec<FrameObjectAnnotation>, VideoRecord)> =
        plan.par_iter().map(|&(c, j)| annotate_video(spec, c, j)).collect();
    let mut annos = Vec::new();
    let mut records = Vec::new();
    for (a, r) in per_video {
        annos.extend(a);
        records.push(r);
    }
    (annos, records)
}

fn annotate_video(spec: &AnnotationSpec, c: usize, j: usize) -> (Vec<FrameObjectAnnotation>, VideoRecord) {
    let class = &spec.classes[c];
    let mut rng = rng_for(spec.seed, ((c as u64) << 32) | j as u64);
    let video_id = format!("{}_{j:04}", class.label);
    let t = spec.num_frames;
    let (fw, fh) = (f64::from(spec.width), f64::from(spec.height));

    let mode = if j < class.passing {
        None
    } else {
        Some((j - class.passing) % 5)
    };
    let mut t_ratio = uniform(&mut rng, 0.3, 0.7);
    let mut s_ratio = uniform(&mut rng, 0.05, 0.5);
    let mut aspect = uniform(&mut rng, 0.9, 1.1);
    match mode {
        Some(0) => t_ratio = 0.1,
        Some(1) => t_ratio = 0.95,
        Some(2) => s_ratio = 0.003,
        Some(3) => {
            s_ratio = 0.9;
            aspect = 1.0;
        }
        _ => {}
    }
    let relevant = mode != Some(4);

    let len = ((t_ratio * t as f64).round() as usize).clamp(1, t);
    let start = rng.random_range(0..=t - len);
    let end = start + len;
    let w = s_ratio.sqrt() * fw * aspect;
    let h = s_ratio.sqrt() * fh / aspect;
    let x0 = uniform(&mut rng, 0.0, fw - w);
    let y0 = uniform(&mut rng, 0.0, fh - h);
    let x1 = uniform(&mut rng, 0.0, fw - w);
    let y1 = uniform(&mut rng, 0.0, fh - h);
    let other = uniform(&mut rng, 0.0, 1.0);

    let mut keyframes: Vec<usize> = (start..end).step_by(spec.keyframe_step.max(1)).collect();
    if keyframes.last() != Some(&(end - 1)) {
        keyframes.push(end - 1);
    }
    let mut annos = Vec::new();
    for f in keyframes {
        let p = if len > 1 {
            (f - start) as f64 / (len - 1) as f64
        } else {
            0.0
        };
        let x = x0 + (x1 - x0) * p;
        let y = y0 + (y1 - y0) * p;
        let parts = [
            ("actor", [x, y, x + 0.6 * w, y + 0.6 * h]),
            ("object", [x + 0.4 * w, y + 0.4 * h, x + w, y + h]),
        ];
        for (name, c) in parts {
            annos.push(FrameObjectAnnotation {
                video_id: video_id.clone(),
                frame: f,
                object_id: name.to_string(),
                bbox: BBox::new(c[0], c[1], c[2], c[3]).expect("positive size"),
                relevant,
            });
        }
        let bx = other * (fw - 10.0);
        annos.push(FrameObjectAnnotation {
            video_id: video_id.clone(),
            frame: f,
            object_id: "background".to_string(),
            bbox: BBox::new(bx, 0.0, bx + 10.0, 10.0).expect("positive size"),
            relevant: false,
        });
    }
    let record = VideoRecord {
        meta: VideoMeta {
            video_id,
            num_frames: t,
            width: spec.width,
            height: spec.height,
            fps: 12.0,
        },
        label: class.label.clone(),
    };
    (annos, record)
}

pub const ORACLE_MAX_DETS: usize = 8;
pub const ORACLE_MAX_GTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle instance too large: {dets} detections, {gts} ground truths")]
    TooLarge { dets: usize, gts: usize },
    #[error("oracle needs distinct detection scores")]
    TiedScores,
    #[error("AP is undefined without ground truth")]
    NoGroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleDet<D> {
    pub video: usize,
    pub score: Rational,
    pub item: D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleGt<G> {
    pub video: usize,
    pub item: G,
}

/// AP of one class by a literal sweep.
///
/// Detections are visited from highest to lowest score. Each looks at the
/// not-yet-claimed ground truths of its own video, picks the one with the
/// largest overlap (first listed on ties), and is a true positive when that
/// overlap is at least `alpha`, claiming it. Otherwise it is a false
/// positive and claims nothing.
///
/// All-point AP: the precision-recall points are connected as a staircase
/// whose height at recall `r` is the best precision reached at any recall
/// `>= r`; AP is the area under it. Eleven-point AP averages that height
/// at recalls 0, 0.1, ..., 1 (0 when the recall is never reached).
pub fn oracle_ap<D, G>(
    dets: &[OracleDet<D>],
    gts: &[OracleGt<G>],
    overlap: impl Fn(&D, &G) -> Rational,
    alpha: Rational,
    mode: ApMode,
) -> Result<Rational, OracleError> {
    if dets.len() > ORACLE_MAX_DETS || gts.len() > ORACLE_MAX_GTS {
        return Err(OracleError::TooLarge {
            dets: dets.len(),
            gts: gts.len(),
        });
    }
    if gts.is_empty() {
        return Err(OracleError::NoGroundTruth);
    }
    for i in 0..dets.len() {
        for j in i + 1..dets.len() {
            if dets[i].score == dets[j].score {
                return Err(OracleError::TiedScores);
            }
        }
    }

    // selection sort on score, highest first
    let mut order: Vec<usize> = (0..dets.len()).collect();
    for i in 0..order.len() {
        let mut best = i;
        for j in i + 1..order.len() {
            if dets[order[j]].score > dets[order[best]].score {
                best = j;
            }
        }
        order.swap(i, best);
    }

    let mut claimed = vec![false; gts.len()];
    let mut points: Vec<(Rational, Rational)> = Vec::new();
    let mut hits = 0i64;
    for (k, &d) in order.iter().enumerate() {
        let det = &dets[d];
        let mut pick: Option<usize> = None;
        let mut pick_value = Rational::from_integer(0);
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] || gt.video != det.video {
                continue;
            }
            let v = overlap(&det.item, &gt.item);
            if pick.is_none() || v > pick_value {
                pick = Some(g);
                pick_value = v;
            }
        }
        if let Some(g) = pick {
            if pick_value >= alpha {
                claimed[g] = true;
                hits += 1;
            }
        }
        let recall = Rational::new(hits, gts.len() as i64);
        let precision = Rational::new(hits, k as i64 + 1);
        points.push((recall, precision));
    }

    let height_at = |r: Rational| {
        points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|&(_, p)| p)
            .fold(Rational::from_integer(0), |a, b| if b > a { b } else { a })
    };
    let mut area = Rational::from_integer(0);
    match mode {
        ApMode::AllPoint => {
            let mut prev = Rational::from_integer(0);
            for &(r, _) in &points {
                if r > prev {
                    area += (r - prev) * height_at(r);
                    prev = r;
                }
            }
        }
        ApMode::ElevenPoint => {
            for k in 0..=10 {
                area += height_at(Rational::new(k, 10));
            }
            area /= Rational::from_integer(11);
        }
    }
    Ok(area)
}

/// Box IoU by counting the `pitch x pitch` cells covered by each box.
/// Coordinates must be multiples of `pitch`.
pub fn oracle_iou_grid(a: &BBox, b: &BBox, pitch: f64) -> f64 {
    let cells = |v: f64| {
        let c = v / pitch;
        debug_assert!((c - c.round()).abs() < 1e-6, "{v} is not a multiple of {pitch}");
        c.round() as i64
    };
    let ra = a.coords().map(cells);
    let rb = b.coords().map(cells);
    let inside = |r: &[i64; 4], i: i64, j: i64| r[0] <= i && i < r[2] && r[1] <= j && j < r[3];

    let (mut both, mut either) = (0u64, 0u64);
    for i in ra[0].min(rb[0])..ra[2].max(rb[2]) {
        for j in ra[1].min(rb[1])..ra[3].max(rb[3]) {
            let (ia, ib) = (inside(&ra, i, j), inside(&rb, i, j));
            both += u64::from(ia && ib);
            either += u64::from(ia || ib);
        }
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Spatio-temporal tube IoU by walking every frame: the fraction of frames
/// where both tubes exist among frames where either does, times the mean
/// box IoU over the shared frames.
pub fn oracle_tube_st_iou(a: &Tube<Rational>, b: &Tube<Rational>) -> Rational {
    let zero = Rational::from_integer(0);
    let last = a.segment().end().max(b.segment().end());
    let (mut shared, mut any) = (0i64, 0i64);
    let mut iou_sum = zero;
    for f in 0..last {
        match (a.box_at(f), b.box_at(f)) {
            (Some(p), Some(q)) => {
                shared += 1;
                any += 1;
                let (p, q) = (p.coords(), q.coords());
                let w = p[2].min(q[2]) - p[0].max(q[0]);
                let h = p[3].min(q[3]) - p[1].max(q[1]);
                let inter = if w > zero && h > zero { w * h } else { zero };
                let area_p = (p[2] - p[0]) * (p[3] - p[1]);
                let area_q = (q[2] - q[0]) * (q[3] - q[1]);
                iou_sum += inter / (area_p + area_q - inter);
            }
            (None, None) => {}
            _ => any += 1,
        }
    }
    if shared == 0 {
        return zero;
    }
    Rational::new(shared, any) * iou_sum / Rational::from_integer(shared)
}
