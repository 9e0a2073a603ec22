use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diverse_prefs::experiment::{exit_code, run_experiment, Command, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "diverse-prefs", version, about = "Preference learning and alignment across annotator groups")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a preference dataset.
    Gen(Common),
    /// Fit one reward to all annotators.
    FitSingle(Common),
    /// Hard-EM mixture of rewards.
    FitMixture {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// KL-regularized policy for the single fitted reward.
    AlignSingle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Max-min policy over group rewards.
    AlignMaxmin {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Check the reward-mismatch and alignment-gap lower bounds.
    VerifyBounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Accuracy per group as the majority:minority ratio grows.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<usize>>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Grid navigation demo: per-group and max-min trajectories.
    Gridworld {
        #[command(flatten)]
        common: Common,
        /// `default` or a map file.
        #[arg(long)]
        map: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
    },
}

fn split(cmd: Cmd) -> (Command, Common, Overrides) {
    let none = Overrides::default();
    match cmd {
        Cmd::Gen(c) => (Command::Gen, c, none),
        Cmd::FitSingle(c) => (Command::FitSingle, c, none),
        Cmd::FitMixture { common, k, restarts } => (Command::FitMixture, common, Overrides { k, restarts, ..none }),
        Cmd::AlignSingle { common, beta } => (Command::AlignSingle, common, Overrides { beta, ..none }),
        Cmd::AlignMaxmin { common, beta } => (Command::AlignMaxmin, common, Overrides { beta, ..none }),
        Cmd::VerifyBounds { common, beta } => (Command::VerifyBounds, common, Overrides { beta, ..none }),
        Cmd::Sweep { common, ratios, beta } => (Command::Sweep, common, Overrides { ratios, beta, ..none }),
        Cmd::Gridworld { common, map, beta } => (Command::Gridworld, common, Overrides { map, beta, ..none }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, mut overrides) = split(cli.command);
    overrides.seed = common.seed;
    overrides.out = common.out;
    let result = ExperimentConfig::load(&common.config).and_then(|mut cfg| {
        cfg.apply(&overrides);
        cfg.validate()?;
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        run_experiment(&cfg, command, &out)
    });
    match result {
        Ok(m) => {
            for f in &m.outputs {
                println!("{f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
