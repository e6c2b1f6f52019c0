use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "anchorscope",
    version,
    about = "Prior-box layout analysis and detector evaluation for small objects"
)]
pub struct Cli {
    /// Print errors as JSON objects on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,

    /// How to treat malformed input lines.
    #[arg(long, global = true, value_enum, default_value_t = OnErrorArg::Fail)]
    pub on_error: OnErrorArg,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OnErrorArg {
    /// Stop at the first bad line.
    Fail,
    /// Skip bad lines and report how many were dropped.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cumulative stride, receptive field and feature size per layer.
    Rf(RfArgs),
    /// Generate prior boxes and summarize their spacing.
    Priors(PriorsArgs),
    /// Largest prior stride that still reaches a target IoU.
    StrideAdvice(StrideAdviceArgs),
    /// Fraction of ground truths matched by at least one prior, by width.
    Coverage(CoverageArgs),
    /// Evaluate the training objective on given network outputs.
    Loss(LossArgs),
    /// Class-independent non-maximum suppression.
    Nms(NmsArgs),
    /// ROC, LAMR, per-width and per-track recall.
    Eval(EvalArgs),
    /// Write a deterministic synthetic label/detection set.
    Synth(SynthArgs),
    /// Convert a DTLD label file to JSON lines.
    #[cfg(feature = "dtld")]
    ImportDtld(ImportDtldArgs),
}

/// Network and input size used to place priors.
#[derive(Debug, Args, Serialize)]
pub struct NetArgs {
    /// Network description; `builtin:inception_v3` uses the bundled graph.
    #[arg(long, default_value = "builtin:inception_v3")]
    pub net: String,

    /// Input size as HEIGHTxWIDTH.
    #[arg(long, default_value = "512x2048", value_parser = parse_size)]
    pub input: (u32, u32),
}

#[derive(Debug, Args, Serialize)]
pub struct RfArgs {
    /// Network description, or `builtin:inception_v3`.
    pub netcfg: String,

    /// Input size as HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_size)]
    pub input: (u32, u32),

    /// Show every layer instead of the summary rows.
    #[arg(long)]
    pub all: bool,

    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Write the report to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PriorsArgs {
    /// One or more prior configuration files.
    #[arg(required = true)]
    pub priorcfg: Vec<PathBuf>,

    #[command(flatten)]
    pub net: NetArgs,

    /// Also write every generated box to this CSV file.
    #[arg(long)]
    pub emit: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct StrideAdviceArgs {
    /// Target IoU between an object and its nearest prior.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,

    /// Width of the smallest object in pixels.
    #[arg(long)]
    pub width: f64,

    /// Check a layer stride in pixels and suggest offsets for it.
    #[arg(long)]
    pub stride: Option<f64>,

    /// Height over width of the objects, used for the vertical advice.
    #[arg(long, default_value_t = 1.0 / 0.3)]
    pub aspect_ratio: f64,

    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct CoverageArgs {
    /// One or more prior configuration files; their priors are pooled.
    #[arg(required = true)]
    pub priorcfg: Vec<PathBuf>,

    #[command(flatten)]
    pub net: NetArgs,

    /// Ground-truth labels (JSON lines).
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    pub labels: Option<PathBuf>,

    /// Use this many random boxes instead of a label file.
    #[arg(long)]
    pub synthetic: Option<usize>,

    /// Width distribution of the random boxes.
    #[arg(long, default_value = "uniform:3,40")]
    pub widths: String,

    /// Height over width of the random boxes.
    #[arg(long, default_value_t = 1.0 / 0.3)]
    pub aspect_ratio: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Matching IoU threshold.
    #[arg(long, default_value_t = 0.3)]
    pub iou: f64,

    /// Histogram bin width in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub bin_width: f64,

    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LossArgs {
    /// Prior configuration file(s), then the label file, then the
    /// prediction-row file.
    #[arg(required = true, num_args = 3..)]
    pub files: Vec<PathBuf>,

    #[command(flatten)]
    pub net: NetArgs,

    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,

    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,

    /// Matching IoU threshold.
    #[arg(long, default_value_t = 0.3)]
    pub iou: f64,

    /// `all`, or `hard:RATIO` for hard-negative mining.
    #[arg(long, default_value = "hard:3")]
    pub negatives: String,

    #[arg(long, default_value_t = 0.1)]
    pub variance_center: f64,

    #[arg(long, default_value_t = 0.2)]
    pub variance_size: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct NmsArgs {
    /// Raw detections with state scores (JSON lines).
    pub raw_dets: PathBuf,

    #[arg(long, default_value_t = 0.35)]
    pub iou: f64,

    /// Output file; stdout when absent.
    #[arg(long)]
    pub emit: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DcRuleArg {
    /// Don't-care unless tagged `front`, or if tagged for pedestrians,
    /// cyclists, trams or buses.
    Default,
    /// Only the minimum width decides.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StateArg {
    Off,
    Red,
    Yellow,
    Green,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Ground-truth labels (JSON lines); defines the image set.
    pub labels: PathBuf,

    /// Final detections (JSON lines).
    pub dets: PathBuf,

    #[arg(long, default_value_t = 0.3)]
    pub iou: f64,

    /// Ground truths narrower than this are don't-care.
    #[arg(long, default_value_t = 0.0)]
    pub min_width: f64,

    /// Number of uniform confidence thresholds.
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,

    #[arg(long, value_enum, default_value_t = DcRuleArg::Default)]
    pub dc_rule: DcRuleArg,

    /// Only score objects and detections of this state.
    #[arg(long, value_enum)]
    pub state: Option<StateArg>,

    /// Count a detection as correct only if its state matches.
    #[arg(long)]
    pub require_state_match: bool,

    /// FPPI of the operating point for width and track recall.
    #[arg(long, default_value_t = 1.0)]
    pub fppi: f64,

    /// Width bin size in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub bin_width: f64,

    #[arg(long)]
    pub emit_roc: Option<PathBuf>,

    #[arg(long)]
    pub emit_width: Option<PathBuf>,

    #[arg(long)]
    pub emit_track: Option<PathBuf>,

    /// Include the log-average miss rate in the summary.
    #[arg(long)]
    pub lamr: bool,

    /// Summary format.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 100)]
    pub images: usize,

    /// `uniform:MIN,MAX` or `lognormal:MU,SIGMA` in pixels.
    #[arg(long, default_value = "uniform:3,40")]
    pub widths: String,

    /// Expected false positives per object.
    #[arg(long, default_value_t = 0.1)]
    pub fp_rate: f64,

    /// Probability that an object is missed.
    #[arg(long, default_value_t = 0.1)]
    pub miss_rate: f64,

    #[arg(long, default_value_t = 10)]
    pub frames_per_sequence: usize,

    #[arg(long, default_value_t = 3)]
    pub max_objects: usize,

    /// Image size as HEIGHTxWIDTH.
    #[arg(long, default_value = "1024x2048", value_parser = parse_size)]
    pub image_size: (u32, u32),

    /// Output label file.
    #[arg(long)]
    pub labels: PathBuf,

    /// Output detection file.
    #[arg(long)]
    pub dets: PathBuf,
}

#[cfg(feature = "dtld")]
#[derive(Debug, Args, Serialize)]
pub struct ImportDtldArgs {
    /// DTLD label file (JSON).
    pub input: PathBuf,

    #[arg(long)]
    pub out: PathBuf,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got '{s}'"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("size must be positive".into());
    }
    Ok((h, w))
}
