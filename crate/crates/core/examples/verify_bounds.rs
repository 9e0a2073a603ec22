//! Reward-mismatch and alignment-gap lower bounds on the two-arm instance
//! and on random instances.
//!
//! `cargo run --release --example verify_bounds`

use diverse_prefs::analysis::{
    minority_epsilon, random_population, verify_lemma1, verify_theorem1, BoundStatus, RandomInstanceSpec,
};
use diverse_prefs::reward::FitConfig;
use diverse_prefs::synthpop::Population;

fn main() -> diverse_prefs::Result<()> {
    let pop = Population::two_arm(1);
    let fit = FitConfig::default();
    let gap = minority_epsilon(&pop)?;
    println!("u* = {}, j* = {}, ε = {:.6}", gap.u_star, gap.j_star, gap.epsilon);
    let l = verify_lemma1(&pop, &fit)?;
    println!("mismatch ‖φ* − φ_u*‖ = {:.6} ≥ {:.6}: {}", l.lhs, l.rhs_stated, l.holds_stated());
    let t = verify_theorem1(&pop, 1.0, &fit)?;
    println!(
        "alignment gap {:.6} vs stated {:.6} ({}) and squared {:.6} ({})",
        t.lhs,
        t.rhs_stated,
        t.holds_stated(),
        t.rhs_proof,
        t.holds_proof()
    );

    let spec = RandomInstanceSpec::default();
    let (mut n, mut stated, mut proof) = (0, 0, 0);
    for i in 0..100 {
        let r = verify_theorem1(&random_population(&spec, 0, i)?, 1.0, &fit)?;
        if r.status == BoundStatus::Applicable {
            n += 1;
            stated += usize::from(r.holds_stated());
            proof += usize::from(r.holds_proof());
        }
    }
    println!("random: {n} applicable, stated holds on {stated}, squared on {proof}");
    Ok(())
}
