//! `nixnet`: batch front end for universal inpainting detection.
//!
//! Exit status: 0 on success, 1 on validation errors, 2 on I/O errors.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "nixnet",
    version,
    about = "Universal deep-inpainting detection"
)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed. Falls back to the config file, then NIX_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded synthetic RGB images (stand-ins for real photos).
    GenSynth(GenSynthArgs),
    /// Write random free-form masks and a manifest.
    GenMasks(GenMasksArgs),
    /// Train the autoencoder GAN on a folder of real images.
    TrainAe(TrainAeArgs),
    /// Simulate a universal training set from real images and an autoencoder.
    GenUt(GenUtArgs),
    /// Train the detector on a universal training set.
    TrainDet(TrainDetArgs),
    /// Score a detector, or a folder of predicted masks, by mIoU.
    Eval(EvalArgs),
    /// Predict the inpainted region of one image.
    Detect(DetectArgs),
    /// Train and score the full model and its ablation variants.
    Ablate(AblateArgs),
    /// Print the detector layout and feature shapes.
    Describe(DescribeArgs),
    /// Write the SRM noise residual of an image as a PNG.
    Residual(ResidualArgs),
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Lower bound of the accepted mask coverage.
    #[arg(long)]
    pub min_coverage: Option<f64>,
    /// Upper bound of the accepted mask coverage.
    #[arg(long)]
    pub max_coverage: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub count: usize,
    /// Side length in pixels [default: 64].
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenMasksArgs {
    #[arg(long)]
    pub count: usize,
    /// Side length in pixels [default: 64].
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub mask: MaskArgs,
}

#[derive(Debug, Args)]
pub struct TrainAeArgs {
    /// Folder of real images (PNG or JPEG), all the same size.
    #[arg(long)]
    pub images: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the reconstruction term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Width of the first encoder stage.
    #[arg(long)]
    pub base_channels: Option<i64>,
    /// Report path [default: <out>.report.json].
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenUtArgs {
    #[arg(long)]
    pub images: PathBuf,
    /// Autoencoder checkpoint from `train-ae`.
    #[arg(long)]
    pub ae: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub mask: MaskArgs,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Focal loss focusing parameter.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Stop as soon as validation mIoU reaches this value.
    #[arg(long)]
    pub target_miou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainDetArgs {
    /// Universal training set written by `gen-ut`.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation set; without it every tenth training sample is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Model variant: full, no-noise-stream, no-image-stream, no-fusion,
    /// no-fusion12 or no-fusion3.
    #[arg(long, default_value = "full")]
    pub variant: String,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Report path [default: <out>.report.json].
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset with ground-truth masks (a `gen-ut` folder).
    #[arg(long)]
    pub data: PathBuf,
    /// Detector checkpoint to run on the dataset images.
    #[arg(
        long,
        conflicts_with = "predictions",
        required_unless_present = "predictions"
    )]
    pub ckpt: Option<PathBuf>,
    /// Folder of predicted mask PNGs named like the dataset's mask files.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Report path [default: eval.report.json].
    #[arg(long, default_value = "eval.report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Folder for `<stem>.mask.png`, `<stem>.prob.png` and the report.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation set; without it every tenth training sample is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Test sets, one table column each.
    #[arg(long = "test", required = true)]
    pub tests: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Subset of variants to run [default: all six].
    #[arg(long = "variant")]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Describe a trained checkpoint instead of a fresh model.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Input side length for a fresh model [default: 64].
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value = "full")]
    pub variant: String,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<nixnet::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

/// The error chain joined with `: `, skipping causes already quoted by
/// their parent.
fn message(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let s = cause.to_string();
        if !msg.ends_with(&s) {
            msg = format!("{msg}: {s}");
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
