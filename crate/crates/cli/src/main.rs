mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reflectguard::eval::{ApMode, MeanIouRule};
use reflectguard::filter::ShiftBasis;

/// Reflection false-positive filter and detection evaluator.
#[derive(Debug, Parser)]
#[command(name = "reflectguard", version)]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true, env = "REFLECTGUARD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Remove likely reflection proposals from a COCO results file.
    Filter(FilterArgs),
    /// Evaluate a COCO results file against ground truth.
    Eval(EvalArgs),
    /// Compare detections before and after filtering.
    Compare(CompareArgs),
    /// Generate synthetic mirror scenes as COCO annotations and results.
    Synth(SynthArgs),
    /// Render the confidence heatmap of one image and class as a PNG.
    Heatmap(HeatmapArgs),
    /// Draw kept and removed boxes for one image.
    Overlay(OverlayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BasisArg {
    Image,
    Box,
}

impl From<BasisArg> for ShiftBasis {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Image => ShiftBasis::ImageHeight,
            BasisArg::Box => ShiftBasis::BoxHeight,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Coco101,
    Voc,
}

impl From<ModeArg> for ApMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Coco101 => ApMode::Coco101,
            ModeArg::Voc => ApMode::VocAllPoint,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MeanIouArg {
    Overlapping,
    All,
}

impl From<MeanIouArg> for MeanIouRule {
    fn from(m: MeanIouArg) -> Self {
        match m {
            MeanIouArg::Overlapping => MeanIouRule::Overlapping,
            MeanIouArg::All => MeanIouRule::All,
        }
    }
}

#[derive(Debug, Args)]
struct FilterParamArgs {
    /// Upward shift as a fraction of the shift basis height.
    #[arg(long, default_value_t = 0.01)]
    shift_fraction: f64,
    /// Only proposals below this confidence are candidates for removal.
    #[arg(long, default_value_t = 0.3)]
    conf_threshold: f64,
    #[arg(long, value_enum, default_value = "image")]
    shift_basis: BasisArg,
    /// Build heatmaps at 1/N resolution per axis.
    #[arg(long, default_value_t = 1)]
    heatmap_downscale: u32,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write every removed proposal with its two mean heats.
    #[arg(long)]
    removal_log: Option<PathBuf>,
    #[command(flatten)]
    params: FilterParamArgs,
}

#[derive(Debug, Args)]
struct EvalOptionArgs {
    #[arg(long, value_enum, default_value = "coco101")]
    mode: ModeArg,
    /// IoU thresholds for TP/FP counts and per-threshold mAP rows.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    iou_thresholds: Vec<f64>,
    /// Score thresholds for the mean IoU table.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.3,0.5,0.7")]
    score_thresholds: Vec<f64>,
    #[arg(long, value_enum, default_value = "overlapping")]
    mean_iou_rule: MeanIouArg,
    /// Keep at most this many highest-scoring detections per image.
    #[arg(long)]
    max_dets: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Include the precision/recall curve at IoU 0.5 for every class.
    #[arg(long)]
    pr_curves: bool,
    #[command(flatten)]
    opts: EvalOptionArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("rows").required(true).multiple(true).args(["after", "baseline_score"])))]
struct CompareArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: Option<PathBuf>,
    #[arg(long)]
    annotations: PathBuf,
    /// Add a row that keeps only `before` detections scoring at least this.
    #[arg(long)]
    baseline_score: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: EvalOptionArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON file of the form {"scenes": [...]}.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_annotations: PathBuf,
    #[arg(long)]
    out_detections: PathBuf,
    /// Also write the origin (object, reflection, clutter) of every proposal.
    #[arg(long)]
    out_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    image_id: u64,
    #[arg(long)]
    class_id: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    heatmap_downscale: u32,
}

#[derive(Debug, Args)]
struct OverlayArgs {
    /// Detections drawn as kept (typically the filter output).
    #[arg(long)]
    detections: PathBuf,
    /// Removal log from `filter`; its proposals are drawn as removed.
    #[arg(long)]
    removal_log: Option<PathBuf>,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    image_id: u64,
    /// Source image; a black canvas of the annotated size is used without it.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
