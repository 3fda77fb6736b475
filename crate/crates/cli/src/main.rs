mod commands;
mod config;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use commands::{Ctx, SegmentChoice};

#[derive(Parser)]
#[command(name = "trunkline", version, about = "Elephant call detection toolkit")]
struct Cli {
    /// JSON run configuration; unset keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, `dotted.path=value` (value parsed as JSON).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Root seed; every random component derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory shared by the commands of one run.
    #[arg(long, short, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus to `<out>/corpus`.
    Synth,
    /// Extract feature caches and frame labels to `<out>/features`.
    Featurize,
    /// Fit a detector on the training folds.
    Train,
    /// Write per-class probability tracks for the test fold.
    Detect {
        /// Every recording instead of the test fold.
        #[arg(long)]
        all: bool,
    },
    /// Turn tracks into segments.
    Endpoint,
    /// Assign call types to segments.
    Classify {
        #[arg(long, value_enum, default_value = "oracle")]
        segments: SegmentChoice,
    },
    /// Score tracks against the annotations.
    Evaluate {
        /// Track CSV to score instead of `<out>/tracks.csv`.
        #[arg(long)]
        tracks: Option<PathBuf>,
    },
    /// Nested cross-validation over the configured search grid.
    Crossval,
    /// Print the resolved configuration.
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Featurize => "featurize",
            Command::Train => "train",
            Command::Detect { .. } => "detect",
            Command::Endpoint => "endpoint",
            Command::Classify { .. } => "classify",
            Command::Evaluate { .. } => "evaluate",
            Command::Crossval => "crossval",
            Command::Config => "config",
        }
    }
}

fn run(cli: &Cli) -> trunkline::Result<()> {
    let cfg = config::resolve(cli.config.as_deref(), &cli.sets, cli.seed)?;
    if let Command::Config = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    std::fs::create_dir_all(&cli.out)?;
    let mut ctx = Ctx::new(cfg, cli.out.clone());
    match &cli.command {
        Command::Synth => commands::synth(&mut ctx)?,
        Command::Featurize => commands::featurize(&mut ctx)?,
        Command::Train => commands::train(&mut ctx)?,
        Command::Detect { all } => commands::detect(&mut ctx, *all)?,
        Command::Endpoint => commands::endpoint_cmd(&mut ctx)?,
        Command::Classify { segments } => commands::classify(&mut ctx, *segments)?,
        Command::Evaluate { tracks } => commands::evaluate_cmd(&mut ctx, tracks.as_deref())?,
        Command::Crossval => commands::crossval(&mut ctx)?,
        Command::Config => unreachable!("handled above"),
    }
    ctx.finish(cli.command.name())?;
    Ok(())
}

/// Timestamps live only in `run.log`, so every other output is reproducible.
fn log_run(out: &std::path::Path, command: &str, status: &str) {
    if !out.is_dir() {
        return;
    }
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    if let Ok(mut f) = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("run.log"))
    {
        let _ = writeln!(f, "{secs} {command} {status}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("TRUNKLINE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        trunkline::parallel::init_threads(n);
    }
    let name = cli.command.name();
    match run(&cli) {
        Ok(()) => {
            log_run(&cli.out, name, "ok");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            log_run(&cli.out, name, &format!("error {}", e.code()));
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
