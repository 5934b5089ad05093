//! Video-level containers shared by evaluation, linking and the synthetic
//! harness.

use crate::geometry::{Segment, Tube, VideoMeta};
use crate::scalar::Scalar;
use crate::tube_linker::{ClassifiedProposal, FrameMap};

/// Ground-truth tubes of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotation<T = f64> {
    pub meta: VideoMeta,
    pub tubes: Vec<Tube<T>>,
}

/// A tube tagged with the video it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTube<T = f64> {
    pub video_id: String,
    pub tube: Tube<T>,
}

impl<T: Scalar> LabeledTube<T> {
    pub fn new(video_id: impl Into<String>, tube: Tube<T>) -> Self {
        Self {
            video_id: video_id.into(),
            tube,
        }
    }
}

/// Class-agnostic scored temporal proposal of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment<T = f64> {
    pub video_id: String,
    pub segment: Segment,
    pub score: T,
}

/// Per-frame detections of one video, the linker's spatial input.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFrames<T = f64> {
    pub video_id: String,
    pub frames: FrameMap<T>,
}

/// Classified temporal proposals of one video, the linker's temporal input.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoProposals<T = f64> {
    pub video_id: String,
    pub proposals: Vec<ClassifiedProposal<T>>,
}

/// Every ground-truth tube of a corpus, tagged with its video, used to
/// evaluate ground truth against itself.
pub fn gts_as_detections<T: Scalar>(gts: &[VideoAnnotation<T>]) -> Vec<LabeledTube<T>> {
    gts.iter()
        .flat_map(|v| {
            v.tubes
                .iter()
                .map(|t| LabeledTube::new(v.meta.video_id.clone(), t.clone()))
        })
        .collect()
}
