//! Single-reward fitting: the empirical MLE approaches the population
//! projection φ*, which sits between the two groups and serves neither.
//!
//! `cargo run --example fit_reward`

use diverse_prefs::reward::{fit_population_reward_extrapolated, fit_single_reward, prediction_accuracy, FitConfig};
use diverse_prefs::synthpop::{sample_dataset, Population};
use diverse_prefs::world::{enumerate_comparisons, FeatureWorld, RewardParams};

fn main() -> diverse_prefs::Result<()> {
    let pop = Population::from_counts(
        FeatureWorld::two_arm(),
        vec![(RewardParams(vec![1.0, 0.0]), 160), (RewardParams(vec![0.0, 1.0]), 40)],
    )?;
    let cfg = FitConfig::default();
    let exact = fit_population_reward_extrapolated(&pop, &enumerate_comparisons(pop.world()), &cfg)?;
    println!("population φ* = {:?} (ridge spread {:.1e})", exact.phi.0, exact.spread);
    for n in [5, 50, 500] {
        let ds = sample_dataset(&pop, n, 1)?;
        let phi = fit_single_reward(ds.records(), pop.world(), &cfg)?;
        println!(
            "{n:>4} comparisons/annotator: φ̂ = ({:+.4}, {:+.4}), train accuracy {:.3}",
            phi.0[0],
            phi.0[1],
            prediction_accuracy(&phi, ds.records(), pop.world())?
        );
    }
    for g in pop.groups() {
        println!("group {} true φ = {:?}, distance to φ* = {:.4}", g.group_id, g.phi_star.0, exact.phi.distance(&g.phi_star));
    }
    Ok(())
}
