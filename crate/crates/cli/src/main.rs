mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use image::Rgb;

/// Attention-guided region extraction and layout-preserving compaction.
///
/// Exit status: 0 on success, 1 on I/O failure, 2 on invalid input or usage.
#[derive(Parser)]
#[command(name = "hide", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth, normalize and denoise the key maps of a bundle
    Purify(PurifyArgs),
    /// Threshold purified maps and write pixel bounding boxes
    Regions(RegionsArgs),
    /// Recompose an image from a boxes file
    Compact(CompactArgs),
    /// Run purification, box extraction and compaction end to end
    Pipeline(PipelineArgs),
    /// Generate a synthetic benchmark with ground truth
    Synth(SynthArgs),
    /// Score predicted boxes against ground truth
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    /// sigma 3, alpha 0.7
    Qwen,
    /// sigma 2, alpha 0.6
    Internvl,
}

impl Preset {
    fn sigma(self) -> f64 {
        match self {
            Preset::Qwen => 3.0,
            Preset::Internvl => 2.0,
        }
    }

    fn alpha(self) -> f64 {
        match self {
            Preset::Qwen => 0.7,
            Preset::Internvl => 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Sequence,
    Random,
    Mask,
    Layout,
    Compact,
}

#[derive(Args, Clone, Debug)]
pub struct SmoothingArgs {
    /// Default hyper-parameters to start from
    #[arg(long, value_enum, default_value = "qwen")]
    preset: Preset,
    /// Gaussian standard deviation in patches (overrides the preset)
    #[arg(long)]
    sigma: Option<f64>,
}

impl SmoothingArgs {
    fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.preset.sigma())
    }
}

#[derive(Args, Clone, Debug)]
pub struct ThresholdArgs {
    /// Binarization threshold on the renormalized map (overrides the preset)
    #[arg(long)]
    alpha: Option<f64>,
    /// Neighbour rule for connected components
    #[arg(long, default_value_t = 8, value_parser = PossibleValuesParser::new(["4", "8"]).map(|s| s.parse::<u8>().unwrap()))]
    connectivity: u8,
    /// Drop components with fewer patches than this
    #[arg(long, default_value_t = 1)]
    min_area: usize,
}

#[derive(Args)]
pub struct PurifyArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RegionsArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct CompactArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    boxes: PathBuf,
    /// Colour of blank cells, as r,g,b
    #[arg(long, value_parser = parse_rgb, default_value = "128,128,128")]
    fill: Rgb<u8>,
    #[arg(long, value_enum, default_value = "compact")]
    mode: Mode,
    /// Seed for the random tiling order
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Provenance sidecar (compact mode); defaults to the output path with
    /// a .json extension
    #[arg(long)]
    provenance: Option<PathBuf>,
}

#[derive(Args)]
pub struct PipelineArgs {
    /// Source image (single-sample mode)
    #[arg(long, required_unless_present = "batch")]
    image: Option<PathBuf>,
    /// Attention bundle for the image (single-sample mode)
    #[arg(long, required_unless_present = "batch")]
    bundle: Option<PathBuf>,
    /// Directory of sample_NNNN/{bundle.hab,image.png}, processed in parallel
    #[arg(long, conflicts_with_all = ["image", "bundle"])]
    batch: Option<PathBuf>,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[arg(long, value_parser = parse_rgb, default_value = "128,128,128")]
    fill: Rgb<u8>,
    #[arg(long, value_enum, default_value = "compact")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Upper bound on worker threads in batch mode
    #[arg(long, env = "HIDE_NUM_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    /// Key tokens (and ground-truth boxes) per sample
    #[arg(long, default_value_t = 2)]
    tokens: usize,
    #[arg(long, default_value_t = 4)]
    noise_tokens: usize,
    #[arg(long, default_value_t = 24)]
    patch_rows: usize,
    #[arg(long, default_value_t = 24)]
    patch_cols: usize,
    #[arg(long, default_value_t = 336)]
    width: u32,
    #[arg(long, default_value_t = 336)]
    height: u32,
    #[arg(long, default_value_t = 3)]
    blob_min: usize,
    #[arg(long, default_value_t = 6)]
    blob_max: usize,
    #[arg(long, default_value_t = 1.0)]
    signal: f32,
    #[arg(long, default_value_t = 1.5)]
    sink: f32,
    #[arg(long, default_value_t = 3)]
    sink_size: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f32,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted boxes file, or a directory of sample_NNNN/boxes.json
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth boxes file, or a directory of sample_NNNN/gt.json
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Report path; printed to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_rgb(s: &str) -> Result<Rgb<u8>, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected r,g,b, got {s:?}"));
    }
    let mut rgb = [0u8; 3];
    for (slot, p) in rgb.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("{p:?} is not a value in 0..=255"))?;
    }
    Ok(Rgb(rgb))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Purify(args) => commands::purify(args),
        Command::Regions(args) => commands::regions(args),
        Command::Compact(args) => commands::compact(args),
        Command::Pipeline(args) => commands::pipeline(args),
        Command::Synth(args) => commands::synth(args),
        Command::Eval(args) => commands::eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
