use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rankprobe_core::config::ExperimentConfig;
use rankprobe_core::footprint::TrendThresholds;
use rankprobe_core::pipeline;
use rankprobe_core::DefectType;

/// Diagnose why a classifier fails by tracking how each hidden layer ranks the true class.
#[derive(Parser)]
#[command(name = "rankprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model and write model.msc.
    Train(Common),
    /// Apply the configured defect and write the corrupted artifacts.
    Inject(Common),
    /// Probe a trained model and classify its faulty test cases.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Model to analyze; defaults to model.msc in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Inject, train and analyze in one go.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; with --defects runs a grid of experiments.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Comma-separated defect kinds (ITD, UTD, SD) for a grid.
        #[arg(long, value_delimiter = ',')]
        defects: Vec<DefectType>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Trend thresholds as `ascend,descend`.
    #[arg(long, value_parser = parse_thresholds)]
    thresholds: Option<TrendThresholds>,
}

fn parse_thresholds(s: &str) -> Result<TrendThresholds, String> {
    let (a, d) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `ascend,descend`, got `{s}`"))?;
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    TrendThresholds::new(num(a)?, num(d)?).map_err(|e| e.to_string())
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(th) = self.thresholds {
            cfg = cfg.with_thresholds(th);
        }
        if let Some(out) = &self.out {
            // relative to the working directory, not the config file
            let out = std::env::current_dir()?.join(out);
            cfg = cfg.with_output_dir(out);
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let o = pipeline::cmd_train(&common.load()?)?;
            println!(
                "train_accuracy={:.4} test_accuracy={:.4} model={}",
                o.train_accuracy,
                o.test_accuracy,
                o.model_path.display()
            );
        }
        Command::Inject(common) => {
            let o = pipeline::cmd_inject(&common.load()?)?;
            println!(
                "injected={} affected_cases={} manifest={}",
                o.manifest.spec.kind,
                o.manifest.affected_case_ids.len(),
                o.manifest_path.display()
            );
        }
        Command::Analyze { common, model } => {
            let o = pipeline::cmd_analyze(&common.load()?, model.as_deref())?;
            print!("{}", o.report.to_text());
        }
        Command::Experiment {
            common,
            seeds,
            defects,
        } => {
            let cfg = common.load()?;
            match (seeds.is_empty(), defects.is_empty()) {
                (true, true) => println!("{}", pipeline::cmd_experiment(&cfg)?.line()),
                (false, false) => {
                    let runs = pipeline::run_grid(&cfg, &seeds, &defects)?;
                    for s in &runs {
                        println!("seed={} {}", s.seed, s.line());
                    }
                    let hits = runs.iter().filter(|s| s.matched() == Some(true)).count();
                    println!("matched {hits} of {}", runs.len());
                }
                _ => bail!("--seeds and --defects must be given together"),
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<rankprobe_core::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
