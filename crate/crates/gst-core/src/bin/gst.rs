//! Command-line front end for the grouped-sequential-training toolkit.
//!
//! Each subcommand runs the pipeline up to one stage, reusing artifacts
//! already present in the output directory. Exit codes: 0 success, 2
//! configuration error, 3 numeric or verification failure.

use clap::{Args, Parser, Subcommand};
use gst_core::harness::{ExperimentConfig, Pipeline, PipelineStage};
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "gst",
    version,
    about = "Grouped sequential training: task generation, affinity probing, spectral grouping, scheduling, verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StageArgs {
    /// Experiment configuration (JSON).
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Output directory for pipeline artifacts.
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Override the config's seed list, e.g. `--seeds 1,2,3`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Run only up to this stage instead of the subcommand's stage
    /// (gen-tasks, probe, cluster, train, compare, verify, plot).
    #[arg(long)]
    only: Option<String>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Generate the synthetic task family (family.json).
    GenTasks(StageArgs),
    /// Estimate the pairwise affinity matrix (affinity.csv / affinity.json).
    Probe(StageArgs),
    /// Spectral-cluster the affinity matrix into groups (partition.json).
    Cluster(StageArgs),
    /// Run every configured schedule for every seed (traces/*.csv).
    Train(StageArgs),
    /// Rank schedules by C(R) at the common budget (report.json).
    Compare(StageArgs),
    /// Run the identity and bound verification suites (verify.json).
    Verify(StageArgs),
    /// Emit SVG charts and their underlying CSV (plots/).
    Plot(StageArgs),
}

impl Command {
    fn stage(&self) -> PipelineStage {
        match self {
            Command::GenTasks(_) => PipelineStage::GenTasks,
            Command::Probe(_) => PipelineStage::Probe,
            Command::Cluster(_) => PipelineStage::Cluster,
            Command::Train(_) => PipelineStage::Train,
            Command::Compare(_) => PipelineStage::Compare,
            Command::Verify(_) => PipelineStage::Verify,
            Command::Plot(_) => PipelineStage::Plot,
        }
    }

    fn args(&self) -> &StageArgs {
        match self {
            Command::GenTasks(a)
            | Command::Probe(a)
            | Command::Cluster(a)
            | Command::Train(a)
            | Command::Compare(a)
            | Command::Verify(a)
            | Command::Plot(a) => a,
        }
    }
}

fn run(cli: Cli) -> gst_core::Result<()> {
    let args = cli.command.args();
    let text = std::fs::read_to_string(&args.config).map_err(|e| gst_core::Error::Config {
        path: args.config.display().to_string(),
        message: format!("cannot read config: {e}"),
    })?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seeds) = &args.seeds {
        if seeds.is_empty() {
            return Err(gst_core::Error::Config {
                path: "--seeds".into(),
                message: "at least one seed required".into(),
            });
        }
        config.seeds = seeds.clone();
        config.validate()?;
    }
    let stage = match &args.only {
        Some(name) => PipelineStage::from_str(name)?,
        None => cli.command.stage(),
    };
    let pipeline = Pipeline::new(config, &args.out)?;
    pipeline.run_to(stage)?;
    println!("{} complete (config {})", stage.name(), pipeline.hash());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        // Machine-readable error record on stderr.
        let record = serde_json::json!({
            "error": err.to_string(),
            "exit_code": err.exit_code(),
        });
        eprintln!("{record}");
        std::process::exit(err.exit_code());
    }
}
