mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser)]
#[command(name = "voxrecon", version, about = "Voxel-SDF reconstruction from posed RGB views")]
struct Cli {
    /// Seed for every random choice (mesh sampling).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the hardware count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene along a camera trajectory.
    Synth(SynthArgs),
    /// Fuse depth views into a voxel TSDF checkpoint, fragment by fragment.
    Fuse(FuseArgs),
    /// Refine a grid under the self-supervised losses.
    Optimize(OptimizeArgs),
    /// Extract the zero level set of a checkpoint as a PLY mesh.
    Mesh(MeshArgs),
    /// Render depth maps of a mesh or checkpoint along a trajectory.
    RenderDepth(RenderDepthArgs),
    /// Compare predicted depth maps or meshes against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Builtin {
    /// Box resting on a textured floor.
    Box,
    /// Inside of a textured box room.
    Room,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TrajectoryKind {
    /// Full circle around the scene center.
    Orbit,
    /// Frontal arc over the box scene.
    Arc,
    /// Cameras inside the room looking across it.
    Inside,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scene description (TOML).
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    scene: Option<PathBuf>,
    /// Use a built-in scene instead of a file.
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
    #[arg(long, value_enum, default_value = "orbit")]
    trajectory: TrajectoryKind,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 1.5)]
    radius: f64,
    #[arg(long, default_value_t = 1.0)]
    height_above: f64,
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 120)]
    height: usize,
    #[arg(long, default_value_t = 140.0)]
    focal: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Grid and fragment flags; each overrides the config file.
#[derive(Args, Default)]
pub struct GridFlags {
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    truncation: Option<f64>,
    #[arg(long)]
    max_depth: Option<f64>,
    #[arg(long)]
    fragment_dims: Option<usize>,
    #[arg(long)]
    views_per_fragment: Option<usize>,
}

#[derive(Args)]
pub struct FuseArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    views: PathBuf,
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long)]
    out: PathBuf,
    /// Fragment manifest; defaults to `<out>.fragments.txt`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum InitMode {
    /// Every observed voxel starts at half the truncation.
    Constant,
    /// Start from the fused TSDF.
    Tsdf,
    /// Start from `--checkpoint`.
    Checkpoint,
}

#[derive(Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    views: PathBuf,
    #[arg(long, value_enum, default_value = "tsdf")]
    init: InitMode,
    #[arg(long, required_if_eq("init", "checkpoint"))]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Build one MPI per fragment and add the depth and rendering losses.
    #[arg(long)]
    mpi: bool,
    #[arg(long)]
    out: PathBuf,
    /// Loss history; defaults to `<out>.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct MeshArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RenderDepthArgs {
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    mesh: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum EvalKind {
    /// Directories of `depth_*.pfm`, matched by file name.
    Depth,
    /// Two PLY meshes.
    Mesh,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    kind: EvalKind,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Print a JSON object instead of key=value lines.
    #[arg(long)]
    json: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Fuse(a) => commands::fuse(&a),
        Command::Optimize(a) => commands::optimize(&a),
        Command::Mesh(a) => commands::mesh(&a),
        Command::RenderDepth(a) => commands::render_depth(&a),
        Command::Eval(a) => commands::eval(&a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
