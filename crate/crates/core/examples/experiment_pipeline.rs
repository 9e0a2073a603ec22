//! Drives every pipeline stage from the shipped two-arm config into a
//! temporary directory, as the `diverse-prefs` binary does.
//!
//! `cargo run --release --example experiment_pipeline`

use diverse_prefs::experiment::{run_experiment, Command, ExperimentConfig};

fn main() -> diverse_prefs::Result<()> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/two_arm.toml");
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.bounds.random_instances = 20;
    cfg.sweep.seeds = 3;
    let out = std::env::temp_dir().join("diverse-prefs-pipeline");
    for cmd in [
        Command::Gen,
        Command::FitSingle,
        Command::FitMixture,
        Command::AlignSingle,
        Command::AlignMaxmin,
        Command::VerifyBounds,
        Command::Sweep,
        Command::Gridworld,
    ] {
        let m = run_experiment(&cfg, cmd, &out)?;
        println!("{:<14} {:.3}s  {}", m.command, m.wall_time_seconds, m.outputs.join(", "));
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
