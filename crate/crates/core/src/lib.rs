//! Algorithmic core of a spatio-temporal action detection toolkit.
//!
//! Geometry, suppression, linking and metrics are generic over the scalar
//! type ([`Scalar`]); `f64` is the default everywhere, `f32` trades
//! precision for memory and [`Rational`] gives exact results for checks.
//! The anchor codec needs `ln`/`exp` and is limited to floats ([`Real`]).

pub mod anchor_codec;
pub mod corpus;
pub mod dataset_builder;
pub mod geometry;
pub mod metrics;
pub mod scalar;
pub mod suppression;
pub mod synth_harness;
pub mod tube_linker;

pub use geometry::{box_iou, segment_iou, tube_st_iou, BBox, GeometryError, Segment, Tube, VideoMeta};
pub use scalar::{Rational, Real, Scalar};

pub type BBoxF32 = BBox<f32>;
pub type BBoxF64 = BBox<f64>;
pub type BBoxExact = BBox<Rational>;

pub type TubeF32 = Tube<f32>;
pub type TubeF64 = Tube<f64>;
pub type TubeExact = Tube<Rational>;

pub type ScoredBoxF32 = suppression::ScoredBox<f32>;
pub type ScoredBoxF64 = suppression::ScoredBox<f64>;
pub type ScoredBoxExact = suppression::ScoredBox<Rational>;
