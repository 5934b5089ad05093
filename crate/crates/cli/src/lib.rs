//! `tubekit` command line: dataset curation, tube linking, evaluation and
//! synthetic corpora over line-delimited JSON files.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tubekit::metrics::{ApMode, EvalOptions, FramePooling};
use tubekit::tube_linker::EmptyFramePolicy;

use crate::commands::{EvalRequest, MetricArg};
use crate::config::Config;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "tubekit", version, about = "Spatio-temporal action detection toolkit")]
pub struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "TUBEKIT_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize, filter and balance a tube dataset from object annotations.
    BuildDataset(BuildDatasetArgs),
    /// Link classified temporal proposals and per-frame boxes into tubes.
    Link(LinkArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Ratio statistics of a built catalog.
    Stats(StatsArgs),
    /// Write a synthetic corpus.
    GenSynth(GenSynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub meta: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[arg(long)]
    pub proposals: PathBuf,
    #[arg(long)]
    pub frame_dets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out stem>.manifest.json` next to `--out`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub temporal_top_k: Option<usize>,
    #[arg(long)]
    pub spatial_top_k: Option<usize>,
    #[arg(long)]
    pub temporal_nms: Option<f64>,
    #[arg(long)]
    pub spatial_nms: Option<f64>,
    /// Link the inputs as given, without NMS or top-K.
    #[arg(long)]
    pub no_suppress: bool,
    #[arg(long, value_enum)]
    pub empty_frame_policy: Option<PolicyArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PolicyArg {
    CarryForward,
    Interpolate,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ApModeArg {
    AllPoint,
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PoolingArg {
    Corpus,
    PerVideo,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Tube records, or proposal records for `--metric ar`.
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value = "video")]
    pub metric: MetricArg,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overlap thresholds (repeatable); defaults depend on the metric.
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    #[arg(long, value_enum)]
    pub ap_mode: Option<ApModeArg>,
    #[arg(long, value_enum)]
    pub frame_pooling: Option<PoolingArg>,
    /// Largest proposal budget on the AR curve.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Also write `stats.json` and `histograms.csv` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Scenario as JSON; omitted fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn eval_request(args: &EvalArgs, cfg: &Config) -> EvalRequest {
    let e = &cfg.eval;
    let defaults = match args.metric {
        MetricArg::Video => &e.video_alphas,
        MetricArg::Frame => &e.frame_alphas,
        MetricArg::Temporal => &e.temporal_alphas,
        MetricArg::Ar => &e.ar_thresholds,
    };
    let ap_mode = match args.ap_mode {
        Some(ApModeArg::AllPoint) => ApMode::AllPoint,
        Some(ApModeArg::ElevenPoint) => ApMode::ElevenPoint,
        None => e.ap_mode,
    };
    let frame_pooling = match args.frame_pooling {
        Some(PoolingArg::Corpus) => FramePooling::Corpus,
        Some(PoolingArg::PerVideo) => FramePooling::PerVideo,
        None => e.frame_pooling,
    };
    EvalRequest {
        metric: args.metric,
        alphas: if args.alphas.is_empty() {
            defaults.clone()
        } else {
            args.alphas.clone()
        },
        highlights: e.temporal_highlights.clone(),
        ar_budget: args.budget.unwrap_or(e.ar_budget),
        options: EvalOptions { ap_mode, frame_pooling },
    }
}

/// Applies command-line overrides to the loaded configuration.
fn merge(cli: &Cli, mut cfg: Config) -> Config {
    match &cli.command {
        Command::BuildDataset(a) => {
            cfg.dataset.seed = a.seed.unwrap_or(cfg.dataset.seed);
            cfg.dataset.per_class = a.per_class.unwrap_or(cfg.dataset.per_class);
            cfg.dataset.bin_width = a.bin_width.unwrap_or(cfg.dataset.bin_width);
        }
        Command::Link(a) => {
            let i = &mut cfg.inference;
            i.temporal_top_k = a.temporal_top_k.unwrap_or(i.temporal_top_k);
            i.spatial_top_k = a.spatial_top_k.unwrap_or(i.spatial_top_k);
            i.temporal_nms = a.temporal_nms.unwrap_or(i.temporal_nms);
            i.spatial_nms = a.spatial_nms.unwrap_or(i.spatial_nms);
            if a.no_suppress {
                i.suppress = false;
            }
            match a.empty_frame_policy {
                Some(PolicyArg::CarryForward) => i.empty_frame_policy = EmptyFramePolicy::CarryForward,
                Some(PolicyArg::Interpolate) => i.empty_frame_policy = EmptyFramePolicy::Interpolate,
                None => {}
            }
        }
        Command::Eval(a) => {
            if let Some(b) = a.budget {
                cfg.eval.ar_budget = b;
            }
        }
        Command::Stats(a) => {
            cfg.dataset.bin_width = a.bin_width.unwrap_or(cfg.dataset.bin_width);
        }
        Command::GenSynth(_) => {}
    }
    cfg
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    match alphas.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
        Some(a) => Err(CliError::input(format!("--alpha {a} must lie in (0, 1]"))),
        None => Ok(()),
    }
}

fn execute(cli: &Cli, cfg: &Config) -> Result<()> {
    match &cli.command {
        Command::BuildDataset(a) => {
            let m = commands::build_dataset(&a.annotations, &a.meta, &a.out_dir, &cfg.dataset)?;
            eprintln!(
                "kept {} videos in {} classes ({} input, {} dropped by ratio filters, {} invalid)",
                m.num_videos,
                m.num_classes,
                m.num_input_videos,
                m.num_input_videos - m.num_kept_after_filter - m.num_rejected_invalid,
                m.num_rejected_invalid
            );
        }
        Command::Link(a) => {
            let manifest = a
                .manifest
                .clone()
                .unwrap_or_else(|| commands::default_manifest_path(&a.out));
            let m = commands::link(&a.proposals, &a.frame_dets, &a.out, &manifest, &cfg.inference)?;
            eprintln!(
                "linked {} tubes from {} proposals over {} videos",
                m.num_tubes, m.num_proposals, m.num_videos
            );
            if !m.rejected.is_empty() {
                eprintln!(
                    "warning: {} proposals had no seed box (see {})",
                    m.rejected.len(),
                    manifest.display()
                );
            }
        }
        Command::Eval(a) => {
            let req = eval_request(a, cfg);
            check_alphas(&req.alphas)?;
            let out = commands::eval(&a.dets, &a.gt, &a.out_dir, &req)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for row in commands::report_csv_rows(&out, &req)
                .iter()
                .filter(|r| r[1] == "all")
                .take(16)
            {
                println!("{} @ {} = {}", row[0], row[2], row[3]);
            }
        }
        Command::Stats(a) => {
            let s = commands::stats(&a.catalog, cfg.dataset.bin_width, a.out_dir.as_deref())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).map_err(|e| CliError::Internal(e.to_string()))?
            );
        }
        Command::GenSynth(a) => {
            let mut spec = commands::read_scenario(a.spec.as_deref())?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            commands::gen_synth(&spec, &a.out_dir)?;
        }
    }
    Ok(())
}

/// Runs a parsed command line inside a pool of `--threads` workers.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = merge(cli, Config::load(cli.config.as_deref())?);
    cfg.validate()?;
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| execute(cli, &cfg))
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal invariant violated (panic)");
            2
        }
    }
}
