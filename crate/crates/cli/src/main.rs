use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use owlgps::environment::{generate_world, write_dataset};
use owlgps::harness::{
    emit_reports, format_summary, load_checkpoint, run_benchmark, save_checkpoint, summarize,
    write_bench, RunConfig, Session,
};
use owlgps::policy::{Mode, Phase};
use owlgps::rng::derive_seed;

#[derive(Parser)]
#[command(name = "owlgps", version, about = "Budgeted active geospatial search simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world of a config and write it as a dataset.
    Generate(Common),
    /// Run the training phase; writes reports and `checkpoint.json`.
    Train(Common),
    /// Run (or resume) the inference phase from a checkpoint.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare modes over several seeds and print a summary table.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated mode names.
        #[arg(long, value_delimiter = ',', default_value = "owl_gps,ga,al,ucb,random")]
        modes: Vec<Mode>,
        /// Number of seeds, counted up from the configured seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut config = RunConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = Some(out.clone());
    }
    let out = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    Ok((config, out))
}

fn finish_phase(mut session: Session, out: &Path, name: &str) -> Result<()> {
    session.run()?;
    emit_reports(session.report(), &out.join(name))?;
    save_checkpoint(&session.snapshot(), &out.join(format!("{name}_checkpoint.json")))?;
    if let Some(sr) = session.report().metrics.sr_pct {
        println!("{name}: {} steps, SR {sr:.2}%", session.steps_done());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate(common) => {
            let (config, out) = load(&common)?;
            if config.dataset.is_some() {
                bail!("the config already points at a dataset");
            }
            let mut wc = config.world.clone();
            wc.seed = derive_seed(config.seed, "world");
            let world = generate_world(&wc)?;
            let manifest = write_dataset(&world, &out)?;
            println!("{}", manifest.display());
        }
        Command::Train(common) => {
            let (config, out) = load(&common)?;
            let session = Session::new(&config, Phase::Training, None)?;
            finish_phase(session, &out, "train")?;
            std::fs::copy(out.join("train_checkpoint.json"), out.join("checkpoint.json"))?;
        }
        Command::Infer { common, checkpoint } => {
            let (config, out) = load(&common)?;
            let state = load_checkpoint(&checkpoint)?;
            let session = match state.phase {
                Phase::Training => Session::new(&config, Phase::Inference, Some(state.theta))?,
                Phase::Inference => Session::restore(&config, state)?,
            };
            finish_phase(session, &out, "infer")?;
        }
        Command::Bench { common, modes, seeds } => {
            let (config, out) = load(&common)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| config.seed + i).collect();
            let runs = run_benchmark(&config, &modes, &seeds)?;
            write_bench(&runs, &out)?;
            print!("{}", format_summary(&summarize(&runs)));
        }
    }
    Ok(())
}
