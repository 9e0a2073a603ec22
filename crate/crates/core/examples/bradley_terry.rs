//! Preference probabilities under linear rewards on a small world.
//!
//! `cargo run --example bradley_terry`

use diverse_prefs::world::{enumerate_comparisons, linear_reward, pref_prob, FeatureWorld, RewardParams};

fn main() -> diverse_prefs::Result<()> {
    let world = FeatureWorld::uniform(
        2,
        vec![
            ("greet".into(), vec![("formal".into(), vec![1.0, 0.2]), ("casual".into(), vec![0.1, 1.0])]),
            (
                "explain".into(),
                vec![
                    ("short".into(), vec![0.3, 0.9]),
                    ("long".into(), vec![1.0, 0.1]),
                    ("mixed".into(), vec![0.6, 0.6]),
                ],
            ),
        ],
    )?;
    let phi = RewardParams(vec![1.0, -0.5]);
    println!("feature bound D = {}", world.feature_bound());
    for z in enumerate_comparisons(&world) {
        let p = &world.prompts()[z.prompt];
        println!(
            "{:>8}: {:>6} vs {:<6} r = ({:+.2}, {:+.2})  P(first) = {:.4}",
            p.id,
            p.responses[z.first].id,
            p.responses[z.second].id,
            linear_reward(&phi, &world, z.prompt, z.first)?,
            linear_reward(&phi, &world, z.prompt, z.second)?,
            pref_prob(&phi, &world, &z)?
        );
    }
    Ok(())
}
