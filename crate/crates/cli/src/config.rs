//! TOML configuration. Every field has a default, so an empty file (or no
//! file) reproduces the reference pipeline; command-line flags override
//! whatever the file sets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tubekit::anchor_codec::{DEFAULT_ASPECT_RATIOS, DEFAULT_SCALES, SPATIAL_STRIDE, TEMPORAL_STRIDE};
use tubekit::dataset_builder::DatasetConfig;
use tubekit::metrics::{default_temporal_alphas, ApMode, FramePooling, DEFAULT_AR_BUDGET};
use tubekit::tube_linker::LinkConfig;

use crate::error::{CliError, Result};
use crate::formats::read_text;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub anchors: AnchorConfig,
    pub inference: LinkConfig,
    pub eval: EvalConfig,
    pub dataset: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub scales: Vec<f64>,
    pub aspect_ratios: Vec<f64>,
    pub base_size: f64,
    pub spatial_stride: usize,
    pub temporal_stride: usize,
    pub positive_iou: f64,
    pub negative_iou: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES.to_vec(),
            aspect_ratios: DEFAULT_ASPECT_RATIOS.to_vec(),
            base_size: SPATIAL_STRIDE as f64,
            spatial_stride: SPATIAL_STRIDE,
            temporal_stride: TEMPORAL_STRIDE,
            positive_iou: 0.7,
            negative_iou: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub video_alphas: Vec<f64>,
    pub frame_alphas: Vec<f64>,
    pub temporal_alphas: Vec<f64>,
    /// Temporal thresholds repeated as separate summary rows.
    pub temporal_highlights: Vec<f64>,
    pub ar_thresholds: Vec<f64>,
    pub ar_budget: usize,
    pub ap_mode: ApMode,
    pub frame_pooling: FramePooling,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            video_alphas: vec![0.2, 0.5],
            frame_alphas: vec![0.5],
            temporal_alphas: default_temporal_alphas(),
            temporal_highlights: vec![0.5, 0.7],
            ar_thresholds: default_temporal_alphas(),
            ar_budget: DEFAULT_AR_BUDGET,
            ap_mode: ApMode::AllPoint,
            frame_pooling: FramePooling::Corpus,
        }
    }
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::input(format!("config: `{name}` = {v} must lie in (0, 1)")))
    }
}

fn unit_list(name: &str, vs: &[f64]) -> Result<()> {
    if vs.is_empty() {
        return Err(CliError::input(format!("config: `{name}` must not be empty")));
    }
    for &v in vs {
        if !(v > 0.0 && v <= 1.0) {
            return Err(CliError::input(format!(
                "config: `{name}` entry {v} must lie in (0, 1]"
            )));
        }
    }
    Ok(())
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(CliError::input(format!("config: `{name}` must be at least 1")))
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = read_text(p)?;
                toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.anchors;
        if a.scales.is_empty() || a.aspect_ratios.is_empty() {
            return Err(CliError::input(
                "config: anchor scales and aspect ratios must not be empty",
            ));
        }
        if a.scales
            .iter()
            .chain(&a.aspect_ratios)
            .chain([&a.base_size])
            .any(|&v| !(v > 0.0))
        {
            return Err(CliError::input(
                "config: anchor scales, aspect ratios and base size must be positive",
            ));
        }
        at_least_one("anchors.spatial_stride", a.spatial_stride)?;
        at_least_one("anchors.temporal_stride", a.temporal_stride)?;
        open_unit("anchors.positive_iou", a.positive_iou)?;
        open_unit("anchors.negative_iou", a.negative_iou)?;
        if a.negative_iou > a.positive_iou {
            return Err(CliError::input(
                "config: anchors.negative_iou must not exceed anchors.positive_iou",
            ));
        }

        let i = &self.inference;
        at_least_one("inference.temporal_top_k", i.temporal_top_k)?;
        at_least_one("inference.spatial_top_k", i.spatial_top_k)?;
        open_unit("inference.temporal_nms", i.temporal_nms)?;
        open_unit("inference.spatial_nms", i.spatial_nms)?;

        let e = &self.eval;
        unit_list("eval.video_alphas", &e.video_alphas)?;
        unit_list("eval.frame_alphas", &e.frame_alphas)?;
        unit_list("eval.temporal_alphas", &e.temporal_alphas)?;
        if !e.temporal_highlights.is_empty() {
            unit_list("eval.temporal_highlights", &e.temporal_highlights)?;
        }
        unit_list("eval.ar_thresholds", &e.ar_thresholds)?;
        at_least_one("eval.ar_budget", e.ar_budget)?;

        let d = &self.dataset;
        for (name, r) in [("dataset.t_range", d.t_range), ("dataset.s_range", d.s_range)] {
            if !(0.0 <= r.lo && r.lo <= r.hi && r.hi <= 1.0) {
                return Err(CliError::input(format!(
                    "config: `{name}` must satisfy 0 <= lo <= hi <= 1"
                )));
            }
        }
        at_least_one("dataset.per_class", d.per_class)?;
        if !(d.bin_width > 0.0 && d.bin_width <= 1.0) {
            return Err(CliError::input("config: `dataset.bin_width` must lie in (0, 1]"));
        }
        Ok(())
    }
}
