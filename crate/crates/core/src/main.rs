use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use nearsight::cli::{check_fps_floor, cmd_bench, cmd_evaluate, cmd_report_models, cmd_run, load_config, CliError, EvaluateArgs};

#[derive(Parser)]
#[command(name = "nearsight", version, about = "Depth-gated obstacle alerts and evaluation tools")]
struct Cli {
    /// Pipeline config (TOML). SECTION__KEY environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the alert pipeline until the source ends or a limit is hit.
    Run {
        #[arg(long)]
        max_frames: Option<u64>,
        /// Event trace output, overriding `sinks.trace`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Stats output, overriding `run.stats`.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Compute depth and detection metrics over a dataset manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for report.json, pr_curve.tsv and confusion_matrix.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the configured backends on images lacking prediction or
        /// estimate files.
        #[arg(long)]
        use_backends: bool,
        #[arg(long, requires = "quantized_model")]
        original_model: Option<PathBuf>,
        #[arg(long, requires = "original_model")]
        quantized_model: Option<PathBuf>,
    },
    /// Measure per-stage latency and sustained fps.
    Bench {
        #[arg(long, default_value_t = 100)]
        frames: u64,
        /// Stats output, overriding `run.stats`.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Compare the sizes of an original and a quantized model file.
    ReportModels { original: PathBuf, quantized: PathBuf },
}

fn print_json(value: &impl serde::Serialize) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let cwd = std::env::current_dir().unwrap_or_default();
    match cli.command {
        Command::Run {
            max_frames,
            trace,
            stats,
        } => {
            if max_frames.is_some() {
                cfg.run.max_frames = max_frames;
            }
            // command-line paths are relative to the working directory
            if let Some(t) = trace {
                cfg.sinks.trace = Some(cwd.join(t));
            }
            if let Some(s) = stats {
                cfg.run.stats = Some(cwd.join(s));
            }
            let out = cmd_run(&cfg)?;
            print_json(&out.stats);
        }
        Command::Evaluate {
            manifest,
            out,
            use_backends,
            original_model,
            quantized_model,
        } => {
            let args = EvaluateArgs {
                manifest,
                out_dir: out,
                use_backends,
                original_model,
                quantized_model,
            };
            let report = cmd_evaluate(&cfg, &args)?;
            print_json(&report);
        }
        Command::Bench { frames, stats } => {
            if let Some(s) = stats {
                cfg.run.stats = Some(cwd.join(s));
            }
            let stats = cmd_bench(&cfg, frames)?;
            print_json(&stats);
            check_fps_floor(&stats, cfg.run.fps_floor)?;
        }
        Command::ReportModels { original, quantized } => {
            print_json(&cmd_report_models(&original, &quantized)?);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp_millis()
        .init();
    if let Err(e) = execute(cli) {
        eprintln!("{}", e.to_record());
        std::process::exit(e.exit_code());
    }
}
