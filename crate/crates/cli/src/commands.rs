use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tubekit::corpus::{LabeledSegment, LabeledTube, VideoAnnotation, VideoFrames};
use tubekit::dataset_builder::{
    build_catalog, compute_ratios, dataset_stats, filter_video, DatasetConfig, DatasetStats, Histogram, Manifest,
    RejectReason,
};
use tubekit::metrics::{
    average_recall, frame_map, temporal_map, video_map, ArReport, EvalOptions, EvalReport, MetricKind, MetricsError,
    TemporalReport,
};
use tubekit::synth_harness::{generate_corpus, ScenarioSpec};
use tubekit::tube_linker::{build_detections, ClassifiedProposal, LinkConfig};

use crate::error::{CliError, Result};
use crate::formats::{
    frame_records, group_frames, jsonl_string, peek_schema, proposal_records, read_jsonl_with, read_text, write_atomic,
    write_json, write_jsonl, AnnotationRecord, CatalogRecord, FrameDetsRecord, GtVideoRecord, MetaRecord,
    ProposalRecord, Record, TubeRecord, FORMAT_VERSION,
};

/// JSON document with the same `schema`/`version` header as the JSONL lines.
#[derive(Serialize)]
struct Document<'a, T> {
    schema: &'static str,
    version: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_document<T: Serialize>(path: &Path, schema: &'static str, body: &T) -> Result<()> {
    write_json(
        path,
        &Document {
            schema,
            version: FORMAT_VERSION,
            body,
        },
    )
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Internal(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

pub fn read_gt(path: &Path) -> Result<Vec<VideoAnnotation>> {
    read_jsonl_with(path, GtVideoRecord::into_annotation)
}

pub fn read_tubes(path: &Path) -> Result<Vec<LabeledTube>> {
    read_jsonl_with(path, TubeRecord::into_labeled)
}

// ---------------------------------------------------------------- build-dataset

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub video_id: String,
    pub reason: String,
}

impl Record for RejectionRecord {
    const SCHEMA: &'static str = "tubekit.rejection";
}

pub const MANIFEST_SCHEMA: &str = "tubekit.dataset_manifest";

fn histogram_rows(name: &str, h: &Histogram) -> Vec<Vec<String>> {
    // edges rounded so 3 * 0.05 prints as 0.15
    let edge = |i: usize| ((h.edge(i) * 1e9).round() / 1e9).to_string();
    h.counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let hi = if i + 1 == h.counts.len() {
                "1".to_string()
            } else {
                edge(i + 1)
            };
            vec![name.to_string(), edge(i), hi, c.to_string()]
        })
        .collect()
}

pub fn histograms_csv(stats: &DatasetStats) -> Result<Vec<u8>> {
    let mut rows = histogram_rows("temporal", &stats.temporal);
    rows.extend(histogram_rows("spatial", &stats.spatial));
    csv_bytes(&["ratio", "bin_lo", "bin_hi", "count"], &rows)
}

pub fn build_dataset(annotations: &Path, meta: &Path, out_dir: &Path, cfg: &DatasetConfig) -> Result<Manifest> {
    let annos = read_jsonl_with(annotations, AnnotationRecord::into_annotation)?;
    let videos = read_jsonl_with(meta, MetaRecord::into_record)?;
    let out = build_catalog(annos, &videos, cfg).map_err(CliError::input)?;

    for e in &out.catalog {
        let keep = filter_video(compute_ratios(&e.tube, &e.meta), cfg.t_range, cfg.s_range).is_keep();
        if !keep {
            return Err(CliError::Internal(format!(
                "catalog entry `{}` fails the ratio filters",
                e.meta.video_id
            )));
        }
    }

    let records: Vec<CatalogRecord> = out.catalog.iter().map(CatalogRecord::from_entry).collect();
    let rejections: Vec<RejectionRecord> = out
        .rejections
        .iter()
        .map(|r| RejectionRecord {
            video_id: r.video_id.clone(),
            reason: match &r.reason {
                RejectReason::Invalid(e) => e.to_string(),
                RejectReason::Filtered(v) => {
                    let names: Vec<String> = v
                        .iter()
                        .map(|x| {
                            serde_json::to_value(x)
                                .expect("enum serializes")
                                .as_str()
                                .unwrap_or_default()
                                .to_string()
                        })
                        .collect();
                    format!("filtered: {}", names.join(", "))
                }
            },
        })
        .collect();
    let stats = dataset_stats(&out.catalog, cfg.bin_width);

    write_jsonl(&out_dir.join("catalog.jsonl"), &records)?;
    write_jsonl(&out_dir.join("rejections.jsonl"), &rejections)?;
    write_atomic(&out_dir.join("histograms.csv"), &histograms_csv(&stats)?)?;
    write_document(&out_dir.join("manifest.json"), MANIFEST_SCHEMA, &out.manifest)?;
    Ok(out.manifest)
}

pub fn stats(catalog: &Path, bin_width: f64, out_dir: Option<&Path>) -> Result<DatasetStats> {
    let entries = read_jsonl_with(catalog, CatalogRecord::into_entry)?;
    let stats = dataset_stats(&entries, bin_width);
    if let Some(dir) = out_dir {
        write_document(&dir.join("stats.json"), "tubekit.dataset_stats", &stats)?;
        write_atomic(&dir.join("histograms.csv"), &histograms_csv(&stats)?)?;
    }
    Ok(stats)
}

// ---------------------------------------------------------------- link

pub const LINK_MANIFEST_SCHEMA: &str = "tubekit.link_manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedProposal {
    pub video_id: String,
    pub proposal_index: usize,
    pub start: usize,
    pub end: usize,
    pub class_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkManifest {
    pub inference: LinkConfig,
    pub num_videos: usize,
    pub num_proposals: usize,
    pub num_tubes: usize,
    pub rejected: Vec<RejectedProposal>,
}

pub fn default_manifest_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tubes".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub fn link(
    proposals: &Path,
    frame_dets: &Path,
    out: &Path,
    manifest: &Path,
    cfg: &LinkConfig,
) -> Result<LinkManifest> {
    let frames = read_jsonl_with(frame_dets, |r: FrameDetsRecord| {
        let d = r.to_frame()?;
        Ok((r, d))
    })?;
    let videos: BTreeMap<String, VideoFrames> = group_frames(frames);

    let props = read_jsonl_with(proposals, |r: ProposalRecord| {
        let p = r.to_classified()?;
        Ok((r.video_id, p))
    })?;
    let num_proposals = props.len();
    let mut by_video: BTreeMap<String, Vec<ClassifiedProposal>> = BTreeMap::new();
    for (video_id, p) in props {
        if !videos.contains_key(&video_id) {
            return Err(CliError::input(format!(
                "{}: proposal references unknown video `{video_id}` (not in {})",
                proposals.display(),
                frame_dets.display()
            )));
        }
        by_video.entry(video_id).or_default().push(p);
    }

    let linked: Vec<(&String, tubekit::tube_linker::LinkOutput)> = by_video
        .par_iter()
        .map(|(id, ps)| (id, build_detections(ps, &videos[id].frames, cfg)))
        .collect();

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (id, out) in &linked {
        for t in &out.tubes {
            if !t.score().is_finite() {
                return Err(CliError::Internal(format!("non-finite tube score in video `{id}`")));
            }
            records.push(TubeRecord::from_tube(id, t));
        }
        for d in &out.diagnostics {
            rejected.push(RejectedProposal {
                video_id: (*id).clone(),
                proposal_index: d.proposal_index,
                start: d.segment.start(),
                end: d.segment.end(),
                class_id: d.class_id,
                reason: d.error.to_string(),
            });
        }
    }
    let m = LinkManifest {
        inference: cfg.clone(),
        num_videos: videos.len(),
        num_proposals,
        num_tubes: records.len(),
        rejected,
    };
    write_jsonl(out, &records)?;
    write_document(manifest, LINK_MANIFEST_SCHEMA, &m)?;
    Ok(m)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Video,
    Frame,
    Temporal,
    Ar,
}

#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub metric: MetricArg,
    pub alphas: Vec<f64>,
    pub highlights: Vec<f64>,
    pub ar_budget: usize,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EvalResults {
    PerAlpha {
        reports: Vec<EvalReport>,
    },
    Temporal {
        temporal: TemporalReport,
        highlights: BTreeMap<String, f64>,
    },
    AverageRecall {
        average_recall: ArReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    pub metric: MetricArg,
    pub options: EvalOptions,
    pub num_videos: usize,
    pub num_detections: usize,
    pub warnings: Vec<String>,
    #[serde(flatten)]
    pub results: EvalResults,
}

pub const REPORT_SCHEMA: &str = "tubekit.eval_report";

fn metrics_err(e: MetricsError) -> CliError {
    CliError::input(e)
}

fn alpha_key(a: f64) -> String {
    a.to_string()
}

fn vocabulary_warnings(dets: &[LabeledTube], gts: &[VideoAnnotation]) -> Vec<String> {
    let det_classes: BTreeSet<u32> = dets.iter().map(|d| d.tube.class_id()).collect();
    let gt_classes: BTreeSet<u32> = gts.iter().flat_map(|v| v.tubes.iter().map(|t| t.class_id())).collect();
    let mut out = Vec::new();
    for c in det_classes.difference(&gt_classes) {
        out.push(format!(
            "class {c} appears in detections but not in ground truth; its detections count as false positives"
        ));
    }
    for c in gt_classes.difference(&det_classes) {
        out.push(format!("class {c} has ground truth but no detections; AP 0"));
    }
    out
}

fn range_label(vs: &[f64]) -> String {
    match (vs.first(), vs.last()) {
        (Some(a), Some(b)) if vs.len() > 1 => format!("{a}:{b}"),
        (Some(a), _) => a.to_string(),
        _ => String::new(),
    }
}

pub fn evaluate(dets_path: &Path, gt_path: &Path, req: &EvalRequest) -> Result<EvalOutput> {
    let gts = read_gt(gt_path)?;
    let schema = peek_schema(dets_path)?;
    let num_videos = gts.len();

    if req.metric == MetricArg::Ar {
        let proposals: Vec<LabeledSegment> = match schema.as_deref() {
            Some(ProposalRecord::SCHEMA) => read_jsonl_with(dets_path, |r: ProposalRecord| r.to_labeled_segment())?,
            _ => read_tubes(dets_path)?
                .into_iter()
                .map(|d| LabeledSegment {
                    video_id: d.video_id,
                    segment: d.tube.segment(),
                    score: d.tube.score(),
                })
                .collect(),
        };
        let report = average_recall(&proposals, &gts, &req.alphas, req.ar_budget).map_err(metrics_err)?;
        return Ok(EvalOutput {
            metric: req.metric,
            options: req.options,
            num_videos,
            num_detections: proposals.len(),
            warnings: Vec::new(),
            results: EvalResults::AverageRecall { average_recall: report },
        });
    }

    if schema.as_deref() == Some(ProposalRecord::SCHEMA) {
        return Err(CliError::input(format!(
            "{}: {:?} evaluation needs tube records, found proposals",
            dets_path.display(),
            req.metric
        )));
    }
    let dets = read_tubes(dets_path)?;
    let warnings = vocabulary_warnings(&dets, &gts);
    let results = match req.metric {
        MetricArg::Video | MetricArg::Frame => {
            let reports = req
                .alphas
                .iter()
                .map(|&a| {
                    if req.metric == MetricArg::Video {
                        video_map(&dets, &gts, a, &req.options)
                    } else {
                        frame_map(&dets, &gts, a, &req.options)
                    }
                })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(metrics_err)?;
            EvalResults::PerAlpha { reports }
        }
        MetricArg::Temporal => {
            let mut alphas = req.alphas.clone();
            for &h in &req.highlights {
                if !alphas.contains(&h) {
                    alphas.push(h);
                }
            }
            let full = temporal_map(&dets, &gts, &alphas, &req.options).map_err(metrics_err)?;
            let highlights = req
                .highlights
                .iter()
                .map(|&h| (alpha_key(h), full.map_at(h).expect("highlight evaluated")))
                .collect();
            // the average runs over the requested thresholds only
            let per_alpha: Vec<EvalReport> = full
                .per_alpha
                .into_iter()
                .filter(|r| req.alphas.contains(&r.alpha))
                .collect();
            let average_map = if per_alpha.is_empty() {
                0.0
            } else {
                per_alpha.iter().map(|r| r.map).sum::<f64>() / per_alpha.len() as f64
            };
            EvalResults::Temporal {
                temporal: TemporalReport { per_alpha, average_map },
                highlights,
            }
        }
        MetricArg::Ar => unreachable!("handled above"),
    };
    Ok(EvalOutput {
        metric: req.metric,
        options: req.options,
        num_videos,
        num_detections: dets.len(),
        warnings,
        results,
    })
}

fn metric_prefix(kind: MetricKind) -> &'static str {
    match kind {
        MetricKind::Video => "video",
        MetricKind::Frame => "frame",
        MetricKind::Temporal => "temporal",
        MetricKind::AverageRecall => "AR",
    }
}

fn report_rows(r: &EvalReport, rows: &mut Vec<Vec<String>>) {
    let p = metric_prefix(r.metric);
    for (class, c) in &r.per_class {
        if let Some(ap) = c.ap {
            rows.push(vec![
                format!("{p}_AP"),
                class.to_string(),
                alpha_key(r.alpha),
                ap.to_string(),
            ]);
        }
    }
    rows.push(vec![
        format!("{p}_mAP"),
        "all".into(),
        alpha_key(r.alpha),
        r.map.to_string(),
    ]);
}

/// CSV rows `metric, class, alpha, value`.
pub fn report_csv_rows(out: &EvalOutput, req: &EvalRequest) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    match &out.results {
        EvalResults::PerAlpha { reports } => {
            for r in reports {
                report_rows(r, &mut rows);
            }
        }
        EvalResults::Temporal { temporal, highlights } => {
            for r in &temporal.per_alpha {
                report_rows(r, &mut rows);
            }
            for &h in &req.highlights {
                let key = alpha_key(h);
                rows.push(vec![
                    "temporal_mAP_highlight".into(),
                    "all".into(),
                    key.clone(),
                    highlights[&key].to_string(),
                ]);
            }
            rows.push(vec![
                "temporal_avg_mAP".into(),
                "all".into(),
                range_label(&req.alphas),
                temporal.average_map.to_string(),
            ]);
        }
        EvalResults::AverageRecall { average_recall } => {
            let label = range_label(&average_recall.thresholds);
            rows.push(vec![
                "AR".into(),
                "all".into(),
                label.clone(),
                average_recall.average_recall.to_string(),
            ]);
            for p in &average_recall.curve {
                rows.push(vec![
                    format!("AR@{}", p.budget),
                    "all".into(),
                    label.clone(),
                    p.average_recall.to_string(),
                ]);
            }
        }
    }
    rows
}

pub fn eval(dets: &Path, gt: &Path, out_dir: &Path, req: &EvalRequest) -> Result<EvalOutput> {
    let out = evaluate(dets, gt, req)?;
    let csv = csv_bytes(&["metric", "class", "alpha", "value"], &report_csv_rows(&out, req))?;
    write_document(&out_dir.join("report.json"), REPORT_SCHEMA, &out)?;
    write_atomic(&out_dir.join("report.csv"), &csv)?;
    Ok(out)
}

// ---------------------------------------------------------------- gen-synth

pub fn read_scenario(path: Option<&Path>) -> Result<ScenarioSpec> {
    match path {
        None => Ok(ScenarioSpec::default()),
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
    }
}

/// Writes `gt.jsonl`, `tubes.jsonl`, `frame_dets.jsonl` and `proposals.jsonl`.
pub fn gen_synth(spec: &ScenarioSpec, out_dir: &Path) -> Result<()> {
    let corpus = generate_corpus(spec).map_err(CliError::input)?;
    let gts: Vec<GtVideoRecord> = corpus.gts.iter().map(GtVideoRecord::from_annotation).collect();
    let tubes: Vec<TubeRecord> = corpus
        .dets
        .iter()
        .map(|d| TubeRecord::from_tube(&d.video_id, &d.tube))
        .collect();
    let lengths: BTreeMap<String, usize> = corpus
        .gts
        .iter()
        .map(|v| (v.meta.video_id.clone(), v.meta.num_frames))
        .collect();
    let frames = frame_records(&corpus.frame_dets, &lengths);
    let proposals = proposal_records(&corpus.proposals);

    write_atomic(&out_dir.join("gt.jsonl"), jsonl_string(&gts).as_bytes())?;
    write_jsonl(&out_dir.join("tubes.jsonl"), &tubes)?;
    write_jsonl(&out_dir.join("frame_dets.jsonl"), &frames)?;
    write_jsonl(&out_dir.join("proposals.jsonl"), &proposals)?;
    Ok(())
}
