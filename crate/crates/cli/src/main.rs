use std::path::PathBuf;
use std::process::ExitCode;

use afford_cli::commands::{self, Variant};
use afford_cli::protocol::{Split, STANDARD_SPLITS};
use afford_cli::{CliError, RawConfig, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afford", version, about = "Affordance-guided diffusion policy on a kinematic testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (key = value overrides, `include` allowed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `guidance.mode`: none, loss or spherical.
    #[arg(long)]
    guidance: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Collect expert demonstrations and build the affordance memory.
    Collect(Common),
    /// Train a policy variant on the collected demonstrations.
    Train {
        #[command(flatten)]
        common: Common,
        /// full (contact + trajectory) or contact_only.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Evaluate the full policy on one split or all standard splits.
    Eval {
        #[command(flatten)]
        common: Common,
        /// seen, unseen_instance, unseen_category or spatial.
        #[arg(long)]
        split: Option<String>,
    },
    /// Contact-only / +trajectory / +guidance comparison.
    Ablate(Common),
    /// Spatial-generalization scatter data from two spatial evaluations.
    Plot(Common),
    /// Print the reference configuration with every default.
    Defaults,
}

fn config(c: &Common) -> Result<RunConfig, CliError> {
    let mut raw = match &c.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    if let Some(s) = c.seed {
        raw.set("seed", &s.to_string())?;
    }
    if let Some(g) = &c.guidance {
        raw.set("guidance.mode", g)?;
    }
    RunConfig::from_raw(raw)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Collect(c) => {
            let n = commands::collect(&config(&c)?, &c.out)?;
            println!("collected {n} demonstrations into {}", c.out.display());
        }
        Command::Train { common, variant } => {
            let variant = Variant::parse(&variant)?;
            let curve = commands::train(&config(&common)?, &common.out, variant)?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!("trained {}: loss {first:.4} -> {last:.4}", variant.name());
            }
        }
        Command::Eval { common, split } => {
            let splits = match split {
                Some(s) => vec![s.parse::<Split>()?],
                None => STANDARD_SPLITS.to_vec(),
            };
            let rows = commands::eval(&config(&common)?, &common.out, &splits)?;
            print!("{}", afford_cli::report::rates_table(&rows));
        }
        Command::Ablate(c) => {
            let rows = commands::ablate(&config(&c)?, &c.out)?;
            print!("{}", commands::ablation_grid(&rows));
        }
        Command::Plot(c) => {
            let cfg = config(&c)?;
            let guided = match cfg.guidance.mode {
                afford_core::sampler::GuidanceMode::None => afford_core::sampler::GuidanceMode::Spherical,
                m => m,
            };
            let (plain, with) = commands::plot(&cfg, &c.out, guided)?;
            println!("spatial successes: none {plain}, {guided} {with}");
        }
        Command::Defaults => print!("{}", afford_cli::config::defaults_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
