use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use digitwash_core::config::RunConfig;
use digitwash_core::pipeline::{run_stage, ErrorKind, Stage};
use digitwash_core::report::OutputFormat;

/// Words-versus-deeds gap and crash-risk pipeline.
#[derive(Debug, Parser)]
#[command(name = "digitwash", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for resampling tests and the synthetic generator.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Table formats, comma separated: csv, markdown, latex.
    #[arg(long, global = true, value_delimiter = ',')]
    format: Vec<OutputFormat>,
}

#[derive(Debug, Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic input bundle.
    Synth,
    /// Load, validate, and filter the inputs.
    Ingest,
    /// Score the MD&A corpus.
    Text,
    /// Compute crash-risk measures from weekly returns.
    Crash,
    /// Estimate the words-versus-deeds gap.
    Gdt,
    /// Fit the regression tables.
    Regress,
    /// Summary statistics and group tests.
    Tests,
    /// Render tables.
    Report,
    /// Every stage in order.
    RunAll,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::Synth => Stage::Synth,
            Command::Ingest => Stage::Ingest,
            Command::Text => Stage::Text,
            Command::Crash => Stage::Crash,
            Command::Gdt => Stage::Gdt,
            Command::Regress => Stage::Regress,
            Command::Tests => Stage::Tests,
            Command::Report => Stage::Report,
            Command::RunAll => Stage::RunAll,
        }
    }
}

fn fail(kind: ErrorKind, stage: Stage, message: String) -> ExitCode {
    let body = serde_json::json!({ "error": { "kind": kind, "stage": stage, "message": message } });
    eprintln!("{body}");
    ExitCode::from(1)
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let path = cli.config.as_ref().ok_or("--config is required")?;
    let mut cfg = RunConfig::load(path).map_err(|e| e.0)?;
    if let Some(seed) = cli.seed {
        cfg.inference.seed = Some(seed);
        if let Some(s) = cfg.synth.as_mut() {
            s.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if !cli.format.is_empty() {
        cfg.formats = cli.format.iter().copied().collect();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIGITWASH_LOG", "warn")).init();
    let cli = Cli::parse();
    let stage = cli.command.stage();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(msg) => return fail(ErrorKind::Validation, stage, msg),
    };
    match run_stage(&cfg, stage) {
        Ok(reports) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&reports).expect("serializable")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
