use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Spatial correlation map reconstruction from sparse channel samples.
///
/// Settings resolve as built-in defaults, then `--config` entries (keys are
/// flag names without dashes), then flags given on the command line.
#[derive(Debug, Parser)]
#[command(name = "ckm", version)]
pub struct Cli {
    /// `key=value` file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on the count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes.
    GenScenes(GenScenes),
    /// Convert a CKMImageNet-style PNG corpus to native tensors.
    Ingest(Ingest),
    /// Derive LoS, building and BS maps for a scene.
    Priors(Priors),
    /// Decimate a tensor, or a scene path plus priors, onto a sampling lattice.
    Sample(Sample),
    /// Complete a sampled map.
    Complete(Complete),
    /// Train a completion network.
    Train(Train),
    /// Compare the correlation matrices of completed maps with a scene's.
    Scm(Scm),
    /// Evaluate completed maps against a scene.
    Eval(Eval),
    /// Run gradient, oracle and Monte Carlo checks.
    Selftest(Selftest),
}

#[derive(Debug, Args)]
pub struct PriorFlags {
    /// Variance of the BS Gaussian, in squared pixels.
    #[arg(long = "sigma-sq")]
    pub sigma_sq: Option<f64>,
    /// LoS tolerance around the Friis gain, in dB.
    #[arg(long = "tol-db")]
    pub tol_db: Option<f64>,
    /// Encoded gain below which a pixel is building.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenScenes {
    /// Scene family file; the built-in family when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Ingest {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Layout manifest; the default layout when absent.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub priors: PriorFlags,
}

#[derive(Debug, Args)]
pub struct Priors {
    /// Scene directory holding `pgm1.ckmt` and `meta.txt`.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output tensor; `<scene>/priors.ckmt` when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub priors: PriorFlags,
}

#[derive(Debug, Args)]
pub struct Sample {
    /// Tensor to decimate.
    #[arg(
        long = "in",
        conflicts_with = "scene",
        required_unless_present = "scene"
    )]
    pub input: Option<PathBuf>,
    /// Scene directory: emits the path's gain and angle plus priors.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub path: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Lattice offset as `row,col`.
    #[arg(long)]
    pub offset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub priors: PriorFlags,
}

#[derive(Debug, Args)]
pub struct Complete {
    /// bicubic, knn or model.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub offset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Train {
    /// Directory of scene directories.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation scenes driving the plateau schedule.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub path: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Blocks followed by multi-scale fusion, e.g. `4,8,12`.
    #[arg(long)]
    pub msff: Option<String>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    pub mode: Option<String>,
    /// Attention token pooling factor; 1 is exact attention.
    #[arg(long = "attn-pool")]
    pub attn_pool: Option<usize>,
    /// Add a bicubic enlargement of the observations to the output.
    #[arg(long = "bicubic-skip")]
    pub bicubic_skip: bool,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long = "plateau-epochs")]
    pub plateau_epochs: Option<usize>,
    #[arg(long = "lr-decay")]
    pub lr_decay: Option<f64>,
    /// Iterations per scheduler epoch; one pass over the data when absent.
    #[arg(long = "epoch-iters")]
    pub epoch_iters: Option<usize>,
    /// Also train on the three mirror images of every scene.
    #[arg(long)]
    pub mirror: bool,
    /// Save the weights of the epoch with the lowest validation loss.
    #[arg(long = "keep-best")]
    pub keep_best: bool,
    #[arg(long = "no-los")]
    pub no_los: bool,
    #[arg(long = "no-building")]
    pub no_building: bool,
    #[arg(long = "no-bs")]
    pub no_bs: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub priors: PriorFlags,
}

#[derive(Debug, Args)]
pub struct Scm {
    #[arg(long)]
    pub pgm1: PathBuf,
    #[arg(long)]
    pub pam1: PathBuf,
    #[arg(long)]
    pub pgm2: PathBuf,
    #[arg(long)]
    pub pam2: PathBuf,
    /// Scene directory with the reference maps.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub antennas: Option<usize>,
    /// Element spacing over wavelength.
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Eval {
    /// Directory with `path1.ckmt` and `path2.ckmt`, or the four single maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Scene directory.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Label for the report; the prediction manifest's method when absent.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub antennas: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Sampling stride used to check agreement with the observations.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub offset: Option<String>,
    /// Skip PNG renders.
    #[arg(long = "no-render")]
    pub no_render: bool,
}

#[derive(Debug, Args)]
pub struct Selftest {
    #[arg(long)]
    pub seed: Option<u64>,
}
