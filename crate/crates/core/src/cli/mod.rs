//! Command-line stages. Each stage reads its inputs from the configured
//! paths and the output directory and writes its artifacts back there.

mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_modality, Background, PipelineConfig};

/// A failure tagged with the stage that hit it.
#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

impl StageError {
    pub fn new(stage: &'static str, message: impl Into<String>) -> Self {
        Self { stage, message: message.into() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "g2i", version, about = "Render attributed graphs as per-node images, classify and explain them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the graph and modalities and write a summary
    Ingest(CommonArgs),
    /// Partition nodes into communities by adjacency rows
    Cluster(CommonArgs),
    /// Place communities and features on grids
    Layout(CommonArgs),
    /// Render one image per node
    Render(CommonArgs),
    /// Split the nodes and train the classifier
    Train(CommonArgs),
    /// Score the saved classifier
    Eval(CommonArgs),
    /// Shapley feature importance per class
    Explain(CommonArgs),
    /// Clustering scores of the learned embedding
    Metrics(CommonArgs),
    /// Write a synthetic block-model graph
    Synth(CommonArgs),
    /// All stages from ingest to metrics
    Run(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// key=value settings file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for all artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Edge list: node_a, node_b, weight per line
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Feature CSV: node_id then one column per feature
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Label CSV: node_id,label
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Extra feature table as NAME=PATH (repeatable)
    #[arg(long = "modality", value_name = "NAME=PATH")]
    pub modalities: Vec<String>,
    /// Override any setting as KEY=VALUE (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl CommonArgs {
    /// Defaults, then the config file, then `--set`, then the dedicated flags.
    pub fn resolve(&self) -> Result<PipelineConfig, StageError> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for entry in &self.sets {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| StageError::new("config", format!("--set {entry:?} is not key=value")))?;
            cfg.set(key, value, None)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        for (slot, flag) in [
            (&mut cfg.out, &self.out),
            (&mut cfg.edges, &self.edges),
            (&mut cfg.features, &self.features),
            (&mut cfg.labels, &self.labels),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        for spec in &self.modalities {
            cfg.modalities.push(parse_modality(spec)?);
        }
        Ok(cfg)
    }
}

type Stage = fn(&PipelineConfig) -> Result<(), StageError>;

pub fn execute(cli: &Cli) -> Result<(), StageError> {
    use pipeline::*;
    let (args, stage): (&CommonArgs, Stage) = match &cli.command {
        Command::Ingest(a) => (a, |c| ingest(c).map(drop)),
        Command::Cluster(a) => (a, cluster),
        Command::Layout(a) => (a, layout),
        Command::Render(a) => (a, render),
        Command::Train(a) => (a, train),
        Command::Eval(a) => (a, eval),
        Command::Explain(a) => (a, explain),
        Command::Metrics(a) => (a, metrics),
        Command::Synth(a) => (a, synth),
        Command::Run(a) => (a, run),
    };
    stage(&args.resolve()?)
}
