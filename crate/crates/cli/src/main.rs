//! Command-line entry point: dataset generation, training, novel view
//! synthesis, interpolation, appearance transfer, embedding clustering,
//! warp previews and evaluation.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "wildnvs",
    about = "Appearance-aware multi-view diffusion for novel view synthesis, desk scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    Full,
    NoWarp,
    NoWarpNoApp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrajectoryArg {
    Lateral,
    ZoomOut,
    Circular,
    /// Poses (or scene view references) read from --trajectory-file.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AppearanceEnd {
    Start,
    End,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        #[arg(long, default_value_t = 4)]
        views: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        res: usize,
        /// First scene index; disjoint ranges give disjoint train/test
        /// splits for the same seed.
        #[arg(long, default_value_t = 0)]
        start_index: u64,
    },
    /// Train the denoiser and appearance encoder jointly.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AblationArg::Full)]
        ablation: AblationArg,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate novel views of a scene along a camera trajectory.
    Nvs {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        source_view: usize,
        #[arg(long, value_enum, default_value_t = TrajectoryArg::Circular)]
        trajectory: TrajectoryArg,
        /// Pose list for --trajectory file.
        #[arg(long)]
        trajectory_file: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        frames: usize,
        #[arg(long, default_value_t = 3.0)]
        cfg: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Interpolate between two observed views of a scene.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        start: usize,
        #[arg(long)]
        end: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Which endpoint's appearance the generated frames carry.
        #[arg(long, value_enum, default_value_t = AppearanceEnd::Start)]
        appearance: AppearanceEnd,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3.0)]
        cfg: f64,
    },
    /// Generate novel views with the appearance of an external image.
    AppearanceTransfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        source_view: usize,
        #[arg(long)]
        appearance_image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3.0)]
        cfg: f64,
    },
    /// Cluster appearance embeddings of an image directory.
    Cluster {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render the warp of one view into another view's camera.
    WarpPreview {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        source: usize,
        #[arg(long, default_value_t = 1)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate checkpoints on a scene directory, writing a CSV table.
    Eval {
        /// One or more checkpoints; the first one's encoder is the fixed
        /// appearance-consistency measuring instrument.
        #[arg(long, required = true, num_args = 1..)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        steps: usize,
        #[arg(long, default_value_t = 3.0)]
        cfg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            out,
            scenes,
            views,
            classes,
            seed,
            res,
            start_index,
        } => commands::gen_data(&out, scenes, views, classes, seed, res, start_index),
        Command::Train {
            data,
            out,
            config,
            ablation,
            steps,
            seed,
        } => commands::train(&data, &out, config.as_deref(), ablation.into(), steps, seed),
        Command::Nvs {
            ckpt,
            scene,
            source_view,
            trajectory,
            trajectory_file,
            frames,
            cfg,
            out,
            seed,
        } => commands::nvs(commands::NvsArgs {
            ckpt,
            scene,
            source_view,
            trajectory: trajectory.into(),
            trajectory_file,
            frames,
            cfg,
            out,
            seed,
        }),
        Command::Interpolate {
            ckpt,
            scene,
            start,
            end,
            frames,
            appearance,
            out,
            seed,
            cfg,
        } => commands::interpolate(commands::InterpolateArgs {
            ckpt,
            scene,
            start,
            end,
            frames,
            appearance_from_start: appearance == AppearanceEnd::Start,
            out,
            seed,
            cfg,
        }),
        Command::AppearanceTransfer {
            ckpt,
            scene,
            source_view,
            appearance_image,
            out,
            seed,
            cfg,
        } => commands::appearance_transfer(
            &ckpt,
            &scene,
            source_view,
            &appearance_image,
            &out,
            seed,
            cfg,
        ),
        Command::Cluster {
            ckpt,
            images,
            k,
            out,
            seed,
        } => commands::cluster(&ckpt, &images, k, &out, seed),
        Command::WarpPreview {
            scene,
            source,
            target,
            out,
        } => commands::warp_preview(&scene, source, target, &out),
        Command::Eval {
            ckpt,
            data,
            out,
            steps,
            cfg,
            seed,
        } => commands::eval(&ckpt, &data, &out, steps, cfg, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

impl From<AblationArg> for wildnvs_core::assembly::Ablation {
    fn from(a: AblationArg) -> Self {
        use wildnvs_core::assembly::Ablation;
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoWarp => Ablation::NoWarp,
            AblationArg::NoWarpNoApp => Ablation::NoWarpNoApp,
        }
    }
}

impl From<TrajectoryArg> for commands::Trajectory {
    fn from(t: TrajectoryArg) -> Self {
        match t {
            TrajectoryArg::Lateral => commands::Trajectory::Lateral,
            TrajectoryArg::ZoomOut => commands::Trajectory::ZoomOut,
            TrajectoryArg::Circular => commands::Trajectory::Circular,
            TrajectoryArg::File => commands::Trajectory::File,
        }
    }
}
