//! Closed-form KL-regularized policy for the single pooled reward and the
//! alignment gap it leaves for each group.
//!
//! `cargo run --example gibbs_alignment`

use diverse_prefs::policy::{align_gap, gibbs_policy, regularized_objective, Policy};
use diverse_prefs::reward::{fit_population_reward, FitConfig};
use diverse_prefs::synthpop::Population;
use diverse_prefs::world::enumerate_comparisons;

fn main() -> diverse_prefs::Result<()> {
    let pop = Population::two_arm(1);
    let world = pop.world();
    let reference = Policy::uniform(world);
    let phi = fit_population_reward(&pop, &enumerate_comparisons(world), &FitConfig::default())?;
    for beta in [0.5, 1.0, 2.0] {
        let pi = gibbs_policy(&phi, &reference, beta, world)?;
        println!("β = {beta}: π = {:?}", pi.row(0));
        for g in pop.groups() {
            let f = regularized_objective(&pi, &g.phi_star, &reference, beta, world)?;
            println!(
                "  group {} (η = {}): F = {:.4}, gap = {:.4}",
                g.group_id,
                g.eta,
                f.value,
                align_gap(&pi, g.group_id, &pop, &reference, beta)?
            );
        }
    }
    Ok(())
}
