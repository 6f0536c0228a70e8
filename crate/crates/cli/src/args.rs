use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reprloc_core::evalkit::{LinearGrid, Metric};
use reprloc_core::localizer::{BoxPolicy, Connectivity};
use reprloc_core::representer::Polarity;

#[derive(Parser, Debug)]
#[command(
    name = "reprloc",
    version,
    about = "Object localization by representer point selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit foreground predictor(s) from the training split.
    Fit(FitArgs),
    /// Localize test images and write boxes (and optionally maps).
    Infer(InferArgs),
    /// Evaluate a localization metric on the test split.
    Eval(EvalArgs),
    /// Top-k representer points for one test patch.
    Explain(ExplainArgs),
    /// Generate a synthetic dataset with planted foreground boxes.
    Synth(SynthArgs),
    /// Check feature files and masks referenced by a manifest.
    Validate(ValidateArgs),
    /// Serve the read-only explain API.
    Serve(ServeArgs),
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must lie in [0, 1], got {v}"))
    }
}

fn sample_rate(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("must lie in (0, 1], got {v}"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be finite and >= 0, got {v}"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be finite and > 0, got {v}"))
    }
}

fn patch(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| format!("expected ROW,COL, got {s:?}"))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad patch index {x:?}"))
    };
    Ok((parse(r)?, parse(c)?))
}

fn grid(s: &str) -> Result<LinearGrid, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConnArg {
    #[value(name = "4")]
    Four,
    #[value(name = "8")]
    Eight,
}

impl From<ConnArg> for Connectivity {
    fn from(c: ConnArg) -> Self {
        match c {
            ConnArg::Four => Connectivity::Four,
            ConnArg::Eight => Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Largest,
    All,
}

impl From<PolicyArg> for BoxPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Largest => BoxPolicy::Largest,
            PolicyArg::All => BoxPolicy::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Gtknown,
    Top1,
    Top5,
    Pxap,
    Piou,
    Maxboxaccv2,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Gtknown => Metric::GtKnown,
            MetricArg::Top1 => Metric::Top1,
            MetricArg::Top5 => Metric::Top5,
            MetricArg::Pxap => Metric::Pxap,
            MetricArg::Piou => Metric::Piou,
            MetricArg::Maxboxaccv2 => Metric::MaxBoxAccV2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Global,
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolarityArg {
    Excitatory,
    Inhibitory,
    Both,
}

impl From<PolarityArg> for Polarity {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::Excitatory => Polarity::Excitatory,
            PolarityArg::Inhibitory => Polarity::Inhibitory,
            PolarityArg::Both => Polarity::Both,
        }
    }
}

#[derive(Args, Debug)]
pub struct BoxArgs {
    /// Pixel connectivity for connected components.
    #[arg(long, value_enum, default_value = "4")]
    pub conn: ConnArg,
    /// Which component boxes to report.
    #[arg(long, value_enum, default_value = "largest")]
    pub policy: PolicyArg,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predictor file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// One predictor per class instead of a single class-agnostic one.
    #[arg(long)]
    pub classwise: bool,
    /// With --classwise: one τ from all classes pooled instead of τ per class.
    #[arg(long, requires = "classwise", conflicts_with = "tau_override")]
    pub global_tau: bool,
    #[arg(long, default_value = "1.0", value_parser = sample_rate)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use this τ instead of ‖v‖/‖u‖.
    #[arg(long, value_parser = non_negative)]
    pub tau_override: Option<f64>,
    /// Regularization constant C.
    #[arg(long = "constant-c", default_value = "1.0", value_parser = positive)]
    pub constant_c: f64,
    /// Compensated (Neumaier) summation.
    #[arg(long)]
    pub compensated: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    /// Box threshold on the min-max normalized map.
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    pub threshold: f64,
    /// Localize at every threshold of lo:hi:n instead of one.
    #[arg(long, value_parser = grid, conflicts_with = "threshold")]
    pub threshold_sweep: Option<LinearGrid>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[command(flatten)]
    pub boxes: BoxArgs,
    /// Write activation maps as PGM (image resolution) and raw RPSF (feature resolution).
    #[arg(long)]
    pub emit_maps: bool,
    /// Write PGM overlays with the chosen box drawn in.
    #[arg(long)]
    pub emit_overlays: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long, value_enum)]
    pub metric: MetricArg,
    /// IoU threshold for GT-Known and Top-k.
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    pub delta: f64,
    /// Box threshold for GT-Known and Top-k.
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    pub threshold: f64,
    /// Threshold grid lo:hi:n for MaxBoxAccV2 and PIoU.
    #[arg(long, value_parser = grid, default_value = "0:1:101")]
    pub theta_grid: LinearGrid,
    /// Classifier predictions JSON {image_id: [class, ...]} for Top-1/Top-5.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Re-finalize at n τ values in lo:hi and report the metric at each.
    #[arg(long, value_parser = grid)]
    pub tau_sweep: Option<LinearGrid>,
    #[arg(long, value_enum, default_value = "global")]
    pub piou_aggregation: AggregationArg,
    #[command(flatten)]
    pub boxes: BoxArgs,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-image table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub image: String,
    /// Query patch as ROW,COL in the feature grid.
    #[arg(long, value_parser = patch)]
    pub patch: (usize, usize),
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long, value_enum, default_value = "both")]
    pub polarity: PolarityArg,
    /// Take τ, C and the class from this predictor; otherwise τ is computed
    /// from the whole training split.
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    /// C when no predictor is given.
    #[arg(long = "constant-c", default_value = "1.0", value_parser = positive, conflicts_with = "predictor")]
    pub constant_c: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory (created if needed).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the report JSON here as well as summarizing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictor: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Largest k a representer query may request.
    #[arg(long, default_value_t = reprloc_service::DEFAULT_MAX_K)]
    pub max_k: usize,
    /// Allowed CORS origin (any origin when omitted).
    #[arg(long)]
    pub cors_origin: Option<String>,
}
