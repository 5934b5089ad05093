use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tubekit::corpus::gts_as_detections;
use tubekit::synth_harness::{generate_annotation_corpus, AnnotationSpec, ClassPlan};
use tubekit_cli::commands::read_gt;
use tubekit_cli::formats::{read_jsonl, write_jsonl, AnnotationRecord, CatalogRecord, MetaRecord, TubeRecord};

fn tubekit(args: &[&str]) -> Output {
    tubekit_env(args, &[])
}

fn tubekit_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tubekit"));
    cmd.args(args).env_remove("TUBEKIT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    o
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_lines(path: &Path, lines: &[&str]) {
    let mut s = lines.join("\n");
    if !s.is_empty() {
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn synth(dir: &Path) {
    ok(tubekit(&["gen-synth", "--seed", "3", "--out-dir", &p(dir, "")]));
}

/// Ground truth rewritten as tube detections.
fn gt_as_tubes(dir: &Path) -> PathBuf {
    let gts = read_gt(&dir.join("gt.jsonl")).unwrap();
    let recs: Vec<TubeRecord> = gts_as_detections(&gts)
        .iter()
        .map(|d| TubeRecord::from_tube(&d.video_id, &d.tube))
        .collect();
    let out = dir.join("gt_tubes.jsonl");
    write_jsonl(&out, &recs).unwrap();
    out
}

fn build(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let (annos, meta, out) = (p(dir, "annotations.jsonl"), p(dir, "meta.jsonl"), p(dir, out));
    let mut args = vec![
        "build-dataset",
        "--annotations",
        &annos,
        "--meta",
        &meta,
        "--out-dir",
        &out,
    ];
    args.extend_from_slice(extra);
    tubekit(&args)
}

fn write_annotation_corpus(dir: &Path, classes: Vec<ClassPlan>) {
    let (annos, videos) = generate_annotation_corpus(&AnnotationSpec {
        seed: 11,
        classes,
        ..Default::default()
    });
    let annos: Vec<AnnotationRecord> = annos.iter().map(AnnotationRecord::from_annotation).collect();
    let metas: Vec<MetaRecord> = videos.iter().map(MetaRecord::from_record).collect();
    write_jsonl(&dir.join("annotations.jsonl"), &annos).unwrap();
    write_jsonl(&dir.join("meta.jsonl"), &metas).unwrap();
}

#[test]
fn empty_annotations_give_an_empty_catalog() {
    let d = TempDir::new().unwrap();
    write_lines(&d.path().join("annotations.jsonl"), &[]);
    write_lines(&d.path().join("meta.jsonl"), &[]);
    ok(build(d.path(), "out", &[]));
    assert_eq!(fs::read_to_string(d.path().join("out/catalog.jsonl")).unwrap(), "");
    let m = json(d.path().join("out/manifest.json"));
    assert_eq!(m["num_videos"], 0);
    assert_eq!(m["num_classes"], 0);
    assert_eq!(m["schema"], "tubekit.dataset_manifest");
}

#[test]
fn class_one_short_of_the_quota_is_dropped() {
    let d = TempDir::new().unwrap();
    write_annotation_corpus(
        d.path(),
        vec![
            ClassPlan {
                label: "drop_into".into(),
                videos: 310,
                passing: 300,
            },
            ClassPlan {
                label: "lift_up".into(),
                videos: 305,
                passing: 299,
            },
        ],
    );
    ok(build(d.path(), "a", &[]));
    ok(build(d.path(), "b", &[]));

    let catalog: Vec<CatalogRecord> = read_jsonl(&d.path().join("a/catalog.jsonl")).unwrap();
    assert_eq!(catalog.len(), 300);
    assert!(catalog.iter().all(|r| r.label == "drop_into" && r.class_id == 0));
    let m = json(d.path().join("a/manifest.json"));
    assert_eq!(m["num_classes"], 1);
    let lift = m["classes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["label"] == "lift_up")
        .unwrap();
    assert_eq!(lift["available"], 299);
    assert_eq!(lift["selected"], 0);
    assert!(lift["class_id"].is_null());

    for f in ["catalog.jsonl", "rejections.jsonl", "histograms.csv", "manifest.json"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_flag_changes_the_sample() {
    let d = TempDir::new().unwrap();
    write_annotation_corpus(
        d.path(),
        vec![ClassPlan {
            label: "roll".into(),
            videos: 30,
            passing: 25,
        }],
    );
    ok(build(d.path(), "a", &["--per-class", "10", "--seed", "1"]));
    ok(build(d.path(), "b", &["--per-class", "10", "--seed", "2"]));
    let a: Vec<CatalogRecord> = read_jsonl(&d.path().join("a/catalog.jsonl")).unwrap();
    let b: Vec<CatalogRecord> = read_jsonl(&d.path().join("b/catalog.jsonl")).unwrap();
    assert_eq!((a.len(), b.len()), (10, 10));
    assert_ne!(a, b);
}

#[test]
fn stats_reads_a_built_catalog() {
    let d = TempDir::new().unwrap();
    write_annotation_corpus(
        d.path(),
        vec![ClassPlan {
            label: "roll".into(),
            videos: 12,
            passing: 8,
        }],
    );
    ok(build(d.path(), "out", &["--per-class", "5"]));
    let o = ok(tubekit(&[
        "stats",
        "--catalog",
        &p(d.path(), "out/catalog.jsonl"),
        "--out-dir",
        &p(d.path(), "st"),
    ]));
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["num_videos"], 5);
    assert!(d.path().join("st/histograms.csv").exists());
}

const FRAMES: &[&str] = &[
    r#"{"schema":"tubekit.frame_dets","version":"1.0","video_id":"v","frame":0,"boxes":[{"bbox":[0,0,10,10],"score":0.9}]}"#,
    r#"{"schema":"tubekit.frame_dets","version":"1.0","video_id":"v","frame":1,"boxes":[{"bbox":[1,0,11,10],"score":0.8}]}"#,
    r#"{"schema":"tubekit.frame_dets","version":"1.0","video_id":"v","frame":2,"boxes":[]}"#,
];

fn link_case(proposals: &[&str]) -> (TempDir, Output) {
    let d = TempDir::new().unwrap();
    write_lines(&d.path().join("frames.jsonl"), FRAMES);
    write_lines(&d.path().join("props.jsonl"), proposals);
    let o = tubekit(&[
        "link",
        "--proposals",
        &p(d.path(), "props.jsonl"),
        "--frame-dets",
        &p(d.path(), "frames.jsonl"),
        "--out",
        &p(d.path(), "tubes.jsonl"),
    ]);
    (d, o)
}

fn tubes(d: &TempDir) -> Vec<TubeRecord> {
    read_jsonl(&d.path().join("tubes.jsonl")).unwrap()
}

#[test]
fn link_without_proposals_writes_nothing() {
    let (d, o) = link_case(&[]);
    ok(o);
    assert!(tubes(&d).is_empty());
    assert_eq!(json(d.path().join("tubes.manifest.json"))["num_tubes"], 0);
}

#[test]
fn one_proposal_gives_one_tube() {
    let (d, o) = link_case(&[
        r#"{"schema":"tubekit.proposal","version":"1.0","video_id":"v","start":0,"end":3,"class_id":4,"score":0.5}"#,
    ]);
    ok(o);
    let t = tubes(&d);
    assert_eq!(t.len(), 1);
    assert_eq!((t[0].start, t[0].end, t[0].class_id), (0, 3, 4));
    // frame 2 is empty, so the frame-1 box is carried
    assert_eq!(
        t[0].boxes,
        vec![[0.0, 0.0, 10.0, 10.0], [1.0, 0.0, 11.0, 10.0], [1.0, 0.0, 11.0, 10.0]]
    );
    assert!((t[0].score - (0.5 + (0.9 + 0.8 + 0.8) / 3.0)).abs() < 1e-12);
}

#[test]
fn overlapping_proposals_are_suppressed() {
    let (d, o) = link_case(&[
        r#"{"schema":"tubekit.proposal","version":"1.0","video_id":"v","start":0,"end":3,"class_id":1,"score":0.6}"#,
        r#"{"schema":"tubekit.proposal","version":"1.0","video_id":"v","start":0,"end":2,"class_id":1,"score":0.5}"#,
    ]);
    ok(o);
    let t = tubes(&d);
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].end, 3);
}

#[test]
fn proposal_for_unknown_video_is_an_input_error() {
    let (_d, o) = link_case(&[
        r#"{"schema":"tubekit.proposal","version":"1.0","video_id":"ghost","start":0,"end":2,"class_id":0,"score":0.5}"#,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ghost"), "{}", stderr(&o));
}

#[test]
fn malformed_line_reports_its_number() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    let text = fs::read_to_string(d.path().join("tubes.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{not json";
    write_lines(&d.path().join("bad.jsonl"), &lines);
    let o = tubekit(&[
        "eval",
        "--dets",
        &p(d.path(), "bad.jsonl"),
        "--gt",
        &p(d.path(), "gt.jsonl"),
        "--out-dir",
        &p(d.path(), "r"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.jsonl:2:"), "{}", stderr(&o));
}

#[test]
fn unknown_major_version_is_rejected() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    let text = fs::read_to_string(d.path().join("tubes.jsonl"))
        .unwrap()
        .replace(r#""version":"1.0""#, r#""version":"2.0""#);
    fs::write(d.path().join("v2.jsonl"), text).unwrap();
    let o = tubekit(&[
        "eval",
        "--dets",
        &p(d.path(), "v2.jsonl"),
        "--gt",
        &p(d.path(), "gt.jsonl"),
        "--out-dir",
        &p(d.path(), "r"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unsupported format version"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(tubekit(&["eval"]).status.code(), Some(1));
    assert_eq!(tubekit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tubekit(&["--help"]).status.code(), Some(0));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn ground_truth_scores_one_on_every_metric() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    let dets = gt_as_tubes(d.path());
    for metric in ["video", "frame", "temporal"] {
        let out = p(d.path(), metric);
        ok(tubekit(&[
            "eval",
            "--metric",
            metric,
            "--dets",
            dets.to_str().unwrap(),
            "--gt",
            &p(d.path(), "gt.jsonl"),
            "--out-dir",
            &out,
        ]));
        let rows = csv_rows(&Path::new(&out).join("report.csv"));
        let summary: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == "all").collect();
        assert!(!summary.is_empty());
        for r in summary {
            assert_eq!(r[3].parse::<f64>().unwrap(), 1.0, "{metric}: {r:?}");
        }
    }
}

#[test]
fn temporal_report_lists_twelve_map_rows() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    ok(tubekit(&[
        "eval",
        "--metric",
        "temporal",
        "--dets",
        &p(d.path(), "tubes.jsonl"),
        "--gt",
        &p(d.path(), "gt.jsonl"),
        "--out-dir",
        &p(d.path(), "r"),
    ]));
    let rows = csv_rows(&d.path().join("r/report.csv"));
    assert_eq!(rows.iter().filter(|r| r[0].starts_with("temporal_mAP")).count(), 12);
    assert_eq!(rows.iter().filter(|r| r[0] == "temporal_avg_mAP").count(), 1);
    assert_eq!(json(d.path().join("r/report.json"))["schema"], "tubekit.eval_report");
}

#[test]
fn proposals_feed_average_recall() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    ok(tubekit(&[
        "eval",
        "--metric",
        "ar",
        "--dets",
        &p(d.path(), "proposals.jsonl"),
        "--gt",
        &p(d.path(), "gt.jsonl"),
        "--out-dir",
        &p(d.path(), "r"),
    ]));
    let rows = csv_rows(&d.path().join("r/report.csv"));
    let ar: f64 = rows.iter().find(|r| r[0] == "AR").unwrap()[3].parse().unwrap();
    assert!((0.0..=1.0).contains(&ar));
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    fs::write(
        d.path().join("cfg.toml"),
        "[inference]\ntemporal_top_k = 7\nspatial_nms = 0.3\n",
    )
    .unwrap();
    let link = |extra: &[&str], name: &str| {
        let mut args = vec![
            "link".to_string(),
            "--proposals".into(),
            p(d.path(), "proposals.jsonl"),
            "--frame-dets".into(),
            p(d.path(), "frame_dets.jsonl"),
            "--out".into(),
            p(d.path(), name),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(tubekit(&refs));
        json(d.path().join(name.replace(".jsonl", ".manifest.json")))["inference"].clone()
    };
    let cfg = p(d.path(), "cfg.toml");
    let plain = link(&[], "a.jsonl");
    let file = link(&["--config", &cfg], "b.jsonl");
    let flag = link(&["--config", &cfg, "--temporal-top-k", "9"], "c.jsonl");
    assert_eq!(
        (plain["temporal_top_k"].clone(), plain["spatial_nms"].clone()),
        (300.into(), 0.2.into())
    );
    assert_eq!(
        (file["temporal_top_k"].clone(), file["spatial_nms"].clone()),
        (7.into(), 0.3.into())
    );
    assert_eq!(
        (flag["temporal_top_k"].clone(), flag["spatial_nms"].clone()),
        (9.into(), 0.3.into())
    );
}

#[test]
fn unknown_config_key_is_rejected() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    fs::write(d.path().join("cfg.toml"), "[inference]\ntemporal_topk = 7\n").unwrap();
    let o = tubekit(&[
        "--config",
        &p(d.path(), "cfg.toml"),
        "link",
        "--proposals",
        &p(d.path(), "proposals.jsonl"),
        "--frame-dets",
        &p(d.path(), "frame_dets.jsonl"),
        "--out",
        &p(d.path(), "t.jsonl"),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn outputs_ignore_thread_count() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    let mut seen = Vec::new();
    for threads in ["1", "3"] {
        let tubes = p(d.path(), &format!("t{threads}.jsonl"));
        let env = [("TUBEKIT_THREADS", threads)];
        ok(tubekit_env(
            &[
                "link",
                "--proposals",
                &p(d.path(), "proposals.jsonl"),
                "--frame-dets",
                &p(d.path(), "frame_dets.jsonl"),
                "--out",
                &tubes,
            ],
            &env,
        ));
        let out = p(d.path(), &format!("r{threads}"));
        ok(tubekit_env(
            &[
                "eval",
                "--metric",
                "frame",
                "--dets",
                &tubes,
                "--gt",
                &p(d.path(), "gt.jsonl"),
                "--out-dir",
                &out,
            ],
            &env,
        ));
        seen.push((
            fs::read(&tubes).unwrap(),
            fs::read(Path::new(&out).join("report.json")).unwrap(),
        ));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn synthetic_files_round_trip() {
    let d = TempDir::new().unwrap();
    synth(d.path());
    let recs: Vec<TubeRecord> = read_jsonl(&d.path().join("tubes.jsonl")).unwrap();
    write_jsonl(&d.path().join("again.jsonl"), &recs).unwrap();
    assert_eq!(
        fs::read(d.path().join("tubes.jsonl")).unwrap(),
        fs::read(d.path().join("again.jsonl")).unwrap()
    );
}
