//! Command-line grammar and configuration resolution.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use scenario_hg::config::TrainConfig;
use scenario_hg::ingest::DatasetFormat;
use scenario_hg::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "scenario-hg", version, about = "Scenario-aware next-POI recommendation")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a raw check-in log, label scenarios and build the graphs.
    Prepare {
        /// Raw check-in file.
        #[arg(long)]
        dataset: PathBuf,
        /// `foursquare` or `gowalla`.
        #[arg(long)]
        format: DatasetFormat,
        /// City centers, one `name<TAB>lat<TAB>lon` per line (required for Gowalla).
        #[arg(long)]
        centers: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a model on a prepared directory and write a checkpoint.
    Train {
        /// Directory written by `prepare`.
        #[arg(long)]
        prepared: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score the test split and write the sliced metrics report.
    Eval(CheckpointArgs),
    /// Write the distance histogram and category-share delta artifacts.
    Analyze(CheckpointArgs),
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prepared directory; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub prepared: Option<PathBuf>,
    /// Output directory; defaults to a subdirectory of the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Configuration sources, applied as defaults < `--config` file < flags.
/// Among flags, `--set` pairs apply first and the named flags last.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub split_threshold: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub sim_window: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable adaptive parameter splitting.
    #[arg(long)]
    pub no_split: bool,
    /// Use one merged hypergraph per view instead of scenario subgraphs.
    #[arg(long)]
    pub no_subgraph: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            cfg.set(k, v)?;
        }
        let named: [(&str, Option<String>); 13] = [
            ("dim", self.dim.map(|v| v.to_string())),
            ("layers", self.layers.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("weight_decay", self.weight_decay.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("patience", self.patience.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("split_threshold", self.split_threshold.map(|v| v.to_string())),
            ("warmup_epochs", self.warmup_epochs.map(|v| v.to_string())),
            ("sim_window", self.sim_window.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if self.no_split {
            cfg.no_split = true;
        }
        if self.no_subgraph {
            cfg.no_subgraph = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
