use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use advrm::harness::{ExperimentConfig, Lab, OUT_ENV};

#[derive(Parser)]
#[command(
    name = "advrm",
    version,
    about = "Adversarial reward-model training lab"
)]
struct Cli {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; runs land in <out>/seed-<seed>.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Config override as dotted.key=value, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the world, the SFT policy and the preference dataset.
    GenWorld,
    /// Train the reward-model ensemble of a round.
    TrainRm {
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Optimise a policy against the round-0 proxy.
    TrainPolicy,
    /// Train the adversarial policy against a round's ensemble.
    Attack {
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Filter and deduplicate a round's attack candidates.
    Filter {
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Pair retained attacks with preferred SFT responses.
    BuildPairs {
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// train-rm, attack, filter and build-pairs for one round.
    Round {
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Success rates, baselines, ablations, correlations and downstream curves.
    Evaluate,
    /// CSV tables, SVG figures and report.md.
    Report,
    /// Every stage in order, or up to and including --stage.
    Reproduce {
        #[arg(long)]
        stage: Option<String>,
    },
    /// Print the effective configuration.
    ShowConfig,
}

fn load_config(cli: &Cli) -> advrm::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

const STAGES: [&str; 5] = ["gen-world", "rounds", "train-policy", "evaluate", "report"];

fn reproduce(lab: &mut Lab, stop: Option<&str>) -> advrm::Result<()> {
    if let Some(s) = stop {
        if !STAGES.contains(&s) {
            return Err(advrm::Error::config(format!(
                "unknown stage {s:?}; expected one of {STAGES:?}"
            )));
        }
    }
    for stage in STAGES {
        match stage {
            "gen-world" => lab.gen_world()?,
            "rounds" => {
                for r in 0..=lab.config.rounds {
                    lab.round(r)?;
                }
            }
            "train-policy" => lab.train_policy()?,
            "evaluate" => {
                lab.evaluate()?;
            }
            _ => lab.report()?,
        }
        log::info!("stage {stage} done");
        if stop == Some(stage) {
            break;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> advrm::Result<()> {
    let config = load_config(&cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let mut lab = Lab::open(config, &cli.out)?;
    match cli.command {
        Command::GenWorld => lab.gen_world()?,
        Command::TrainRm { round } => lab.train_rm(round)?,
        Command::TrainPolicy => lab.train_policy()?,
        Command::Attack { round } => lab.attack(round)?,
        Command::Filter { round } => lab.filter(round)?,
        Command::BuildPairs { round } => lab.build_pairs(round)?,
        Command::Round { round } => lab.round(round)?,
        Command::Evaluate => {
            let s = lab.evaluate()?;
            print!("{}", advrm::harness::render_markdown(&s));
        }
        Command::Report => lab.report()?,
        Command::Reproduce { stage } => reproduce(&mut lab, stage.as_deref())?,
        Command::ShowConfig => unreachable!(),
    }
    println!("{}", lab.dir.root().display());
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
