//! Max-min alignment: the mirror-ascent iterate and the dual solver agree,
//! and both lift the worst-off group above the pooled-reward policy.
//!
//! `cargo run --example maxmin_alignment`

use diverse_prefs::maxmin::{min_group_objective, solve_maxmin, MaxMinConfig};
use diverse_prefs::policy::{gibbs_policy, Policy};
use diverse_prefs::reward::{fit_population_reward, FitConfig};
use diverse_prefs::synthpop::Population;
use diverse_prefs::world::enumerate_comparisons;

fn main() -> diverse_prefs::Result<()> {
    let pop = Population::two_arm(1);
    let world = pop.world();
    let reference = Policy::uniform(world);
    let beta = 1.0;
    let run = solve_maxmin(&pop, &reference, beta, &MaxMinConfig::default())?;
    let it = run.iterate.expect("both solvers run by default");
    let dual = run.dual.expect("both solvers run by default");
    println!("iterate: G = {:.6} after {} steps, π = {:?}", it.objective, it.trace.len(), it.policy.row(0));
    println!(
        "dual:    G = {:.6}, λ = {:?}, duality gap {:.1e}",
        dual.objective,
        dual.lambda.as_deref().unwrap_or_default(),
        dual.duality_gap.unwrap_or(f64::NAN)
    );
    let phi = fit_population_reward(&pop, &enumerate_comparisons(world), &FitConfig::default())?;
    let single = gibbs_policy(&phi, &reference, beta, world)?;
    let (u, g) = min_group_objective(&single, &pop, &reference, beta)?;
    println!("pooled reward: worst group {u} gets G = {g:.6}");
    Ok(())
}
