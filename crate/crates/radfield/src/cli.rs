//! Command-line interface definition.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Grid radiance fields: oracle scenes, training, rendering, pose-referenced
/// video coding, streaming and disparity processing.
#[derive(Debug, Parser)]
#[command(name = "radfield", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON); defaults apply to omitted keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed (the field is initialized with seed + 1)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voxelize a scene spec
    Scene {
        /// Scene spec (JSON)
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the oracle training views into a dataset directory
    Dataset {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write the compression capture trajectory instead of the training views
        #[arg(long)]
        capture: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a static field
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory; rendered from the oracle when omitted
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Train a canonical field with a deformation grid
    TrainDynamic {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Render a checkpoint along the config's held-out orbit
    Render {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Time for dynamic checkpoints
        #[arg(long, default_value_t = 0.0)]
        time: f64,
        /// Samples per ray (defaults to the config's oracle sample count)
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compression savings of field-referenced coding over intra coding
    Compress {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Reference field; trained from the config when omitted
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use the oracle scene itself as the reference
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
        /// Savings CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream frames between two processes over TCP
    Stream {
        #[command(subcommand)]
        role: StreamCommand,
    },
    /// Disparity-map processing
    Disparity {
        #[command(subcommand)]
        action: DisparityCommand,
    },
    /// PSNR and SSIM between PPM images
    Eval {
        /// Reference images
        #[arg(long = "ref", num_args = 1.., required = true)]
        reference: Vec<PathBuf>,
        /// Test images, paired with --ref in order
        #[arg(long, num_args = 1.., required = true)]
        test: Vec<PathBuf>,
        /// CSV path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// Field checkpoint shared by both ends
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Samples per ray of the reference render; both ends must agree
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Code frames without a reference (baseline)
    #[arg(long)]
    pub intra: bool,
    /// Transcript CSV
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum StreamCommand {
    /// Send a dataset directory's frames and poses
    Send {
        /// Dataset directory (transforms.json and PPM frames)
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        connect: String,
        /// Quantization step
        #[arg(long, default_value_t = 1)]
        q: u8,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Receive one session and write the rebuilt frames
    Recv {
        /// Port on 127.0.0.1, or a full address
        #[arg(long)]
        listen: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum DisparityCommand {
    /// Threshold, open and crop a disparity map
    Process {
        /// Disparity map (16-bit PGM with sidecar scale)
        #[arg(long = "in")]
        input: PathBuf,
        /// Opacity map (16-bit PGM)
        #[arg(long)]
        opacity: PathBuf,
        #[arg(long, default_value_t = radfield_core::depthnav::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = radfield_core::depthnav::DEFAULT_KERNEL)]
        kernel: usize,
        #[arg(long, default_value_t = radfield_core::depthnav::DEFAULT_ITERATIONS)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
        /// Clearance query region `x,y,width,height`; repeatable
        #[arg(long, value_parser = parse_region)]
        region: Vec<radfield_core::depthnav::Rect>,
        /// Clearance CSV (stdout when omitted)
        #[arg(long)]
        clearance: Option<PathBuf>,
    },
}

pub fn parse_region(s: &str) -> Result<radfield_core::depthnav::Rect, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("`{p}` is not a non-negative integer")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, width, height] => Ok(radfield_core::depthnav::Rect { x, y, width, height }),
        _ => Err("expected x,y,width,height".into()),
    }
}
