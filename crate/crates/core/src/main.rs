use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hyhdr_core::pipeline::{cmd_eval, cmd_infer, cmd_synth, cmd_train};
use hyhdr_core::train::TrainConfig;
use hyhdr_core::{Error, Result};

#[derive(Parser)]
#[command(name = "hyhdr", version, about = "Multi-exposure HDR deghosting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic multi-exposure samples.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Image size as HxW.
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a sample directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with training options; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fuse one exposure stack into an HDR image (PFM plus a PPM preview).
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a sample directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn read_config(path: Option<&PathBuf>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, count, size, seed } => {
            let dirs = cmd_synth(&out, count, size.0, size.1, seed)?;
            println!("wrote {} samples to {}", dirs.len(), out.display());
        }
        Command::Train { data, out, config, resume } => {
            let cfg = read_config(config.as_ref())?;
            let done = cmd_train(cfg, &data, &out, resume.as_deref())?;
            match done.last {
                Some(l) => println!("trained to step {} (loss {:.6})", done.steps, l.total),
                None => println!("nothing to do at step {}", done.steps),
            }
            println!("checkpoint: {}", done.checkpoint.display());
            println!("loss log:   {}", done.log.display());
        }
        Command::Infer { ckpt, stack, out } => {
            let hdr = cmd_infer(&ckpt, &stack, &out)?;
            println!("wrote {}x{} HDR image to {}", hdr.height(), hdr.width(), out.display());
        }
        Command::Eval { ckpt, data, json } => {
            let report = cmd_eval(&ckpt, &data)?;
            print!("{}", report.table());
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report)?;
                fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
