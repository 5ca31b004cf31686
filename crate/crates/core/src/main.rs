use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use massive_attractor::config::{parse_config_with, Preset};
use massive_attractor::runner::{run, Command};

/// Construct and verify a robust massive attractor.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// construct, certify, simulate, density, lyapunov, srb, perturb or all.
    command: String,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fast or paper; overrides a preset line in the config.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; overrides the config.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> massive_attractor::Result<ExitCode> {
    let command: Command = cli.command.parse()?;
    let preset = cli
        .preset
        .as_deref()
        .map(str::parse::<Preset>)
        .transpose()
        .map_err(massive_attractor::Error::Usage)?;
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let mut cfg = parse_config_with(&text, preset)?;
    if let Some(seed) = cli.seed {
        cfg.lab.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = Some(threads);
    }
    if let Some(threads) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| massive_attractor::Error::Usage(e.to_string()))?;
    }
    let outcome = run(command, &cfg, &cli.out)?;
    if outcome.all_passed {
        println!(
            "all checks passed; report in {}",
            cli.out.join("report.json").display()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!("failed checks:");
        for f in &outcome.failures {
            println!("  {f}");
        }
        Ok(ExitCode::from(1))
    }
}
