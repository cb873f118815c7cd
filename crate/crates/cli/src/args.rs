use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sgsplat::allocation::InitStrategy;
use sgsplat::quantization::{QuantConfig, RvqConfig};
use sgsplat::training::{FitConfig, LearningRates, TuneConfig};

#[derive(Parser, Debug)]
#[command(
    name = "sgsplat",
    version,
    about = "Structure-guided 2D Gaussian splatting for images"
)]
pub struct Cli {
    /// Worker threads; falls back to GS2D_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a Gaussian scene to an image.
    Fit(FitArgs),
    /// Fine-tune with quantizers and write a .gs2c stream.
    Encode(EncodeArgs),
    /// Decode a .gs2c stream to PNG.
    Decode(DecodeArgs),
    /// Rate-distortion sweep over budgets or bitwidth weights.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Random,
    Sgi,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 3000)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 20_000)]
    pub iters: usize,
    #[arg(long = "lambda-g", default_value_t = 0.06)]
    pub lambda_g: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Init::Sgi)]
    pub init: Init,
    #[arg(long = "lr-position", default_value_t = LearningRates::default().position)]
    pub lr_position: f64,
    #[arg(long = "lr-covariance", default_value_t = LearningRates::default().covariance)]
    pub lr_covariance: f64,
    #[arg(long = "lr-color", default_value_t = LearningRates::default().color)]
    pub lr_color: f64,
    #[arg(long = "lr-quantizer", default_value_t = LearningRates::default().quantizer)]
    pub lr_quantizer: f64,
    #[arg(long = "log-interval", default_value_t = 10)]
    pub log_interval: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BitRange {
    pub min: u32,
    pub max: u32,
}

/// Accepts `6..16`, `6-16` or `6,16`.
pub fn parse_bit_range(s: &str) -> Result<BitRange, String> {
    let parts: Vec<&str> = s.split(['.', '-', ',']).filter(|p| !p.is_empty()).collect();
    let [a, b] = parts[..] else {
        return Err(format!("expected MIN..MAX, got {s:?}"));
    };
    let min: u32 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let max: u32 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if !(1..=16).contains(&min) || !(1..=16).contains(&max) || min > max {
        return Err(format!("bit range {min}..{max} must satisfy 1 <= MIN <= MAX <= 16"));
    }
    Ok(BitRange { min, max })
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct TuneArgs {
    #[arg(long = "lambda-r", default_value_t = 1.0)]
    pub lambda_r: f64,
    #[arg(long = "bit-range", value_parser = parse_bit_range, default_value = "6..16")]
    pub bit_range: BitRange,
    #[arg(long = "init-bits", default_value_t = 8.0)]
    pub init_bits: f64,
    #[arg(long = "pos-bits", default_value_t = 12, value_parser = clap::value_parser!(u32).range(1..=24))]
    pub pos_bits: u32,
    #[arg(long = "rvq-stages", default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..=255))]
    pub rvq_stages: u64,
    #[arg(long = "rvq-k", default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..=65536))]
    pub rvq_k: u64,
    #[arg(long = "rvq-iters", default_value_t = 10)]
    pub rvq_iters: usize,
    #[arg(long = "tune-iters", default_value_t = 10_000)]
    pub tune_iters: usize,
}

impl TrainArgs {
    pub fn config(&self, tune: Option<(&TuneArgs, f64)>) -> FitConfig {
        let mut cfg = FitConfig {
            n_gaussians: self.gaussians,
            iterations: self.iters,
            lr: LearningRates {
                position: self.lr_position,
                covariance: self.lr_covariance,
                color: self.lr_color,
                quantizer: self.lr_quantizer,
            },
            lambda_g: self.lambda_g,
            seed: self.seed,
            init: match self.init {
                Init::Random => InitStrategy::Random,
                Init::Sgi => InitStrategy::StructureGuided,
            },
            log_interval: self.log_interval.max(1),
            ..Default::default()
        };
        if let Some((t, lambda_b)) = tune {
            cfg.tune = TuneConfig {
                iterations: t.tune_iters,
                lambda_b,
                lambda_r: t.lambda_r,
                quant: QuantConfig {
                    bit_min: t.bit_range.min,
                    bit_max: t.bit_range.max,
                    init_bits: t.init_bits,
                    pos_bits: t.pos_bits,
                    rvq: RvqConfig {
                        stages: t.rvq_stages as usize,
                        entries: t.rvq_k as usize,
                        iterations: t.rvq_iters,
                    },
                },
            };
        }
        cfg
    }
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    pub input: PathBuf,
    /// Scene file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV (default: `<out>.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Rendered PNG (default: `<out>.png`).
    #[arg(long)]
    pub render: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct EncodeArgs {
    /// A scene file from `fit`, or a PNG to fit first.
    pub input: PathBuf,
    /// Target image; required when the input is a scene file.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Decoded reconstruction PNG.
    #[arg(long)]
    pub render: Option<PathBuf>,
    #[arg(long = "lambda-b", default_value_t = 0.0012)]
    pub lambda_b: f64,
    #[command(flatten)]
    pub tune: TuneArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct DecodeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Time decode plus render over repeated runs.
    #[arg(long)]
    pub time: bool,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Gaussian budgets, one operating point each.
    #[arg(long, value_delimiter = ',', conflicts_with = "lambda_b")]
    pub budgets: Vec<usize>,
    /// Bitwidth-loss weights, one operating point each, at `--gaussians`.
    #[arg(long = "lambda-b", value_delimiter = ',')]
    pub lambda_b: Vec<f64>,
    /// Output CSV of rate-distortion points.
    #[arg(long)]
    pub out: PathBuf,
    /// Reference CSV for BD-rate and BD-PSNR.
    #[arg(long)]
    pub bd: Option<PathBuf>,
    #[command(flatten)]
    pub tune: TuneArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}
