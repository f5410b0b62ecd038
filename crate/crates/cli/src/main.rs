use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hand2robot::Execution;
use hand2robot_cli::cmd::demo::DemoSpec;
use hand2robot_cli::{
    cmd_augment, cmd_inspect, cmd_mix, cmd_retarget, cmd_validate, write_demo, CliError, LoadedConfig, RunOptions,
    EXIT_OK, EXIT_VALIDATION,
};

/// Turn hand reconstructions into robot demonstration datasets.
#[derive(Parser, Debug)]
#[command(name = "hand2robot", version)]
struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true, default_value = "hand2robot.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run every check but write nothing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// error, warn, info, debug or trace; overrides the config.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hand tracks and robot logs to a chunked dataset.
    Retarget,
    /// Paint hands in the camera frames (Full, Partial or None).
    Augment,
    /// Balanced human/robot training schedule.
    Mix,
    /// Re-check a dataset; exit 4 on any finding.
    Validate {
        /// Dataset root; the config output when omitted.
        root: Option<PathBuf>,
    },
    /// SVG pose/gripper plots and PNG overlays.
    Inspect {
        #[arg(long)]
        episode: Option<String>,
    },
    /// Write synthetic demo inputs and a config into DIR.
    Demo {
        dir: PathBuf,
        #[arg(long, default_value_t = 90)]
        frames: usize,
    },
}

fn load(cli: &Cli) -> Result<LoadedConfig, CliError> {
    let mut cfg = LoadedConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.config.seed = s;
    }
    if let Some(l) = &cli.log_level {
        cfg.config.log_level = l.clone();
    }
    cfg.config.check_values()?;
    Ok(cfg)
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .try_init();
}

fn execute(cli: &Cli, run: &RunOptions) -> Result<i32, CliError> {
    let needs_config = !matches!(cli.command, Command::Demo { .. } | Command::Validate { root: Some(_) });
    let cfg = if needs_config { Some(load(cli)?) } else { None };
    let level = cli
        .log_level
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.config.log_level.clone()))
        .unwrap_or_else(|| "info".into());
    init_logging(&level);

    match &cli.command {
        Command::Retarget => {
            let out = cmd_retarget(cfg.as_ref().unwrap(), run)?;
            println!("{}", serde_json::to_string_pretty(&out.report).unwrap());
            Ok(out.exit_code())
        }
        Command::Augment => {
            let report = cmd_augment(cfg.as_ref().unwrap(), run)?;
            for t in &report.tracks {
                for m in &t.modes {
                    println!(
                        "{} {}: {}/{} frames augmented -> {}",
                        t.episode_id,
                        m.mode.suffix(),
                        m.stats.augmented,
                        m.stats.frames,
                        m.output
                    );
                }
                if let Some(k) = t.partial_within_full {
                    println!("{}: partial within full on {k}/{} frames", t.episode_id, t.frames);
                }
            }
            Ok(report.exit_code())
        }
        Command::Mix => {
            let s = cmd_mix(cfg.as_ref().unwrap(), run)?;
            println!("{}", serde_json::to_string_pretty(&s).unwrap());
            Ok(EXIT_OK)
        }
        Command::Validate { root } => {
            let root = root.clone().unwrap_or_else(|| cfg.as_ref().unwrap().output());
            let findings = cmd_validate(&root, run)?;
            for f in &findings {
                println!("{f}");
            }
            println!("{} findings", findings.len());
            Ok(if findings.is_empty() { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Inspect { episode } => {
            for p in cmd_inspect(cfg.as_ref().unwrap(), episode.as_deref(), run)? {
                println!("{}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Demo { dir, frames } => {
            if run.dry_run {
                println!("dry run: nothing written to {}", dir.display());
                return Ok(EXIT_OK);
            }
            let spec = DemoSpec {
                frames: *frames,
                seed: cli.seed.unwrap_or(DemoSpec::default().seed),
                ..Default::default()
            };
            println!("{}", write_demo(dir, &spec)?.display());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = match cli.jobs {
        Some(0) => {
            eprintln!("config error: --jobs must be at least 1");
            return ExitCode::from(hand2robot_cli::EXIT_CONFIG as u8);
        }
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    let run = RunOptions {
        exec,
        dry_run: cli.dry_run,
    };
    let result = with_pool(cli.jobs, || execute(&cli, &run));
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(feature = "parallel")]
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) if n > 1 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<T>(_jobs: Option<usize>, f: impl FnOnce() -> T) -> T {
    f()
}
