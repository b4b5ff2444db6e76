mod commands;
mod support;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Viewpoint solving and reflective refinement on authored splat scenes.
#[derive(Parser, Debug)]
#[command(name = "anchorview", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a camera pose from explicit constraints or an instruction.
    Solve(SolveArgs),
    /// Solve, then refine the pose with the critic-guided reflective loop.
    Reflect(ReflectArgs),
    /// Run benchmark tasks and print the summary table.
    Bench(BenchArgs),
    /// Render a scene from a pose.
    Render(RenderArgs),
}

#[derive(Args, Debug, Clone)]
struct StartArgs {
    /// Starting camera pose as 12 reals (row-major rotation, then position).
    /// Defaults to a view from 1.3 m in front of and 0.5 m above the scene centre.
    #[arg(long, allow_hyphen_values = true)]
    start_pose: Option<String>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Anchor object id (required with --g).
    #[arg(long)]
    anchor: Option<String>,
    /// Constraint vector "u,v,s,theta_deg,phi_deg".
    #[arg(long, allow_hyphen_values = true, conflicts_with = "instruction", required_unless_present = "instruction")]
    g: Option<String>,
    #[arg(long)]
    instruction: Option<String>,
    #[command(flatten)]
    start: StartArgs,
    /// Run directory prefix; a timestamp suffix is appended.
    #[arg(long, default_value = "runs/solve")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReflectArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, required_unless_present = "objective")]
    instruction: Option<String>,
    /// Objective JSON file (anchor, target centre/scale, region constraints).
    #[arg(long)]
    objective: Option<PathBuf>,
    /// rule | scripted:<file> | llm
    #[arg(long, default_value = "rule")]
    critic: String,
    /// Maximum reflection iterations.
    #[arg(long = "K", default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[command(flatten)]
    start: StartArgs,
    #[arg(long, default_value = "runs/reflect")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "catalog/tasks")]
    tasks: PathBuf,
    /// rule | scripted:<file> | llm
    #[arg(long, default_value = "rule")]
    critic: String,
    /// rule | llm
    #[arg(long, default_value = "rule")]
    parser: String,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    trials: u32,
    #[arg(long, default_value = "runs/bench")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// 12 reals: row-major rotation, then position.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "spherical", required_unless_present = "spherical")]
    pose: Option<String>,
    /// "rho,theta_deg,phi_deg,anchor_id"
    #[arg(long, allow_hyphen_values = true)]
    spherical: Option<String>,
    /// Output PPM file.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Solve(a) => commands::solve(a, &argv),
        Command::Reflect(a) => commands::reflect(a, &argv),
        Command::Bench(a) => commands::bench(a, &argv),
        Command::Render(a) => commands::render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.reason, e.message);
            ExitCode::from(e.code)
        }
    }
}
