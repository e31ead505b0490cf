use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod exit;
mod visualize;

#[derive(Debug, Parser)]
#[command(name = "geosup", version, about = "Train and inspect amplification + geometric self-supervision models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the procedural benchmark described by the config's [data] section.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on an image-folder dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint; epoch numbering carries on.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        deterministic: bool,
    },
    /// Print test-split top-1 accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Export original, grid overlay, warped image, feedback and pattern maps per image.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Train every row of an ablation grid and write a results table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        deterministic: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, out } => commands::generate(&config, &out),
        Command::Train {
            config,
            data,
            out,
            resume,
            deterministic,
        } => commands::train(&config, &data, &out, resume.as_deref(), deterministic),
        Command::Eval { checkpoint, data } => commands::eval(&checkpoint, &data),
        Command::Visualize { checkpoint, out, images } => commands::visualize(&checkpoint, &images, &out),
        Command::Ablate {
            config,
            data,
            out,
            deterministic,
        } => commands::ablate(&config, &data, &out, deterministic),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
