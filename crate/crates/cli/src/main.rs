//! `lafd` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(name = "lafd", version, about = "Lightweight anchor-based face detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a randomly initialised model to a weight file.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print per-module parameter counts and the serialized size.
    Summary {
        #[arg(long)]
        weights: PathBuf,
    },
    /// Detect faces in one image and write a JSON report.
    Detect(DetectArgs),
    /// Print the prior boxes for an input size as JSON.
    Priors {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        height: u32,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        width: u32,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average precision over a directory of images and ground-truth JSON.
    Eval(EvalArgs),
    /// Render synthetic scenes with a ground-truth file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        faces: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 160)]
        height: usize,
        #[arg(long, default_value_t = 160)]
        width: usize,
    },
    /// Run the built-in oracle suite.
    Selfcheck {
        /// Perturb the named check's kernel output (exercises the failure path).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

/// Post-processing overrides; unset flags fall back to `--config`, then to
/// the built-in defaults.
#[derive(Args, Clone, Debug, Default)]
struct PostprocFlags {
    /// Face score threshold in (0, 1) [default: 0.5]
    #[arg(long, value_parser = unit_interval)]
    conf: Option<f32>,
    /// NMS IoU threshold in (0, 1) [default: 0.4]
    #[arg(long, value_parser = unit_interval)]
    nms: Option<f32>,
    /// Skip the resize to the 1560 x 1200 bound.
    #[arg(long)]
    no_resize: bool,
    /// JSON file with post-processing settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the image with boxes and landmarks drawn on it (PPM).
    #[arg(long)]
    annotate: Option<PathBuf>,
    #[command(flatten)]
    post: PostprocFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "detections_override")]
    weights: Option<PathBuf>,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use detections from this JSON file instead of running the model.
    #[arg(long)]
    detections_override: Option<PathBuf>,
    /// IoU needed for a detection to count as a true positive.
    #[arg(long, default_value_t = lafd::eval::DEFAULT_MATCH_IOU, value_parser = unit_interval)]
    iou: f32,
    #[command(flatten)]
    post: PostprocFlags,
}

fn unit_interval(s: &str) -> Result<f32, String> {
    let v: f32 = s.parse().map_err(|e| format!("`{s}` is not a number: {e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::InitWeights { out, seed } => commands::init_weights(&out, seed),
        Command::Summary { weights } => commands::summary(&weights),
        Command::Detect(a) => {
            let cfg = commands::postproc_config(a.post.config.as_deref(), a.post.conf, a.post.nms)?;
            commands::detect(&a.weights, &a.image, &a.out, a.annotate.as_deref(), &cfg, !a.post.no_resize)
        }
        Command::Priors { height, width, out } => commands::priors(height as usize, width as usize, out.as_deref()),
        Command::Eval(a) => {
            let cfg = commands::postproc_config(a.post.config.as_deref(), a.post.conf, a.post.nms)?;
            commands::eval(&commands::EvalOptions {
                weights: a.weights.as_deref(),
                scenes: &a.scenes,
                out: &a.out,
                detections_override: a.detections_override.as_deref(),
                iou: a.iou,
                config: &cfg,
                resize: !a.post.no_resize,
            })
        }
        Command::Synth {
            out,
            count,
            faces,
            seed,
            height,
            width,
        } => commands::synth(&out, count, faces, seed, height, width),
        Command::Selfcheck { inject_fault } => commands::selfcheck(inject_fault),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
