//! `scenario-hg`: prepare, train, evaluate and analyze scenario-aware
//! next-POI models. Exit codes: 0 ok, 1 runtime failure, 2 usage or
//! configuration error.

mod args;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use scenario_hg::pipeline::{self, PrepareOptions};
use scenario_hg::Result;

use args::{CheckpointArgs, Cli, Command};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap already exits with 2 on usage errors and 0 for --help/--version
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { EXIT_USAGE } else { EXIT_RUNTIME })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            dataset,
            format,
            centers,
            out,
            config,
        } => {
            let cfg = config.resolve()?;
            let summary = pipeline::prepare(&PrepareOptions { dataset, format, centers }, &cfg, &out)?;
            println!(
                "prepared {}: {} users, {} POIs, {} train / {} test trajectories, {} graph files",
                out.display(),
                summary.users,
                summary.pois,
                summary.train,
                summary.test,
                summary.graph_files.len()
            );
        }
        Command::Train { prepared, out, config } => {
            let cfg = config.resolve()?;
            let history = pipeline::train(&prepared, &cfg, &out)?;
            let last = history.epochs.last().map_or(f64::NAN, |e| e.combined_loss);
            println!(
                "trained {} epochs (final loss {last:.4}), {} parameter splits; checkpoint in {}",
                history.epochs.len(),
                history.splits.len(),
                out.display()
            );
        }
        Command::Eval(args) => {
            let (prepared, out) = locate(&args, "eval")?;
            let report = pipeline::eval(&prepared, &args.checkpoint, &out)?;
            print!("{}", report.to_csv());
            println!("report written to {}", out.display());
        }
        Command::Analyze(args) => {
            let (prepared, out) = locate(&args, "analysis")?;
            let summary = pipeline::analyze(&prepared, &args.checkpoint, &out)?;
            if !summary.category_delta {
                eprintln!("notice: category delta skipped because the dataset has no POI categories");
            }
            println!(
                "wrote {} distance-histogram series{} to {}",
                summary.distance_series,
                if summary.category_delta { " and the category delta" } else { "" },
                out.display()
            );
        }
    }
    Ok(())
}

fn locate(args: &CheckpointArgs, default_sub: &str) -> Result<(PathBuf, PathBuf)> {
    let prepared = match &args.prepared {
        Some(p) => p.clone(),
        None => pipeline::prepared_dir(&args.checkpoint)?,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&args.checkpoint).join(default_sub));
    Ok((prepared, out))
}
