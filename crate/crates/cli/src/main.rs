//! `nddepth`: synthesize planar scenes, convert between depth and
//! normal/distance maps, detect planes, refine depth, evaluate, and export
//! point clouds.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "nddepth", version, about = "Depth / normal-distance toolkit for piecewise-planar scenes")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set k=0.5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic planar scene
    Synth(commands::SynthArgs),
    /// Depth from normal and distance maps
    Nd2d(commands::Nd2dArgs),
    /// Normal and distance maps from depth
    D2nd(commands::D2ndArgs),
    /// Detect planar regions from normal and distance maps
    Segment(commands::SegmentArgs),
    /// Run iterative depth refinement
    Refine(commands::RefineArgs),
    /// Write freshly initialized refinement weights
    InitWeights(commands::InitWeightsArgs),
    /// Depth metrics of a prediction against ground truth
    Eval(commands::EvalArgs),
    /// Finite-difference gradient checks
    Gradcheck(commands::GradcheckArgs),
    /// Export a depth map as a point cloud
    Ply(commands::PlyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, &cli.config),
        Command::Nd2d(a) => commands::nd2d(a, &cli.config),
        Command::D2nd(a) => commands::d2nd(a, &cli.config),
        Command::Segment(a) => commands::segment(a, &cli.config),
        Command::Refine(a) => commands::refine(a, &cli.config),
        Command::InitWeights(a) => commands::init_weights(a, &cli.config),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ply(a) => commands::ply(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
