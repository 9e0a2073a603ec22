//! Hard EM recovers the annotator groups from pooled preference data.
//!
//! `cargo run --example em_mixture`

use diverse_prefs::reward::{cluster_accuracy, em_fit, FitConfig};
use diverse_prefs::synthpop::{sample_dataset, Population};
use diverse_prefs::world::{FeatureWorld, RewardParams};

fn main() -> diverse_prefs::Result<()> {
    let world = FeatureWorld::uniform(
        2,
        vec![
            ("x0".into(), vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![0.0, 1.0])]),
            ("x1".into(), vec![("a".into(), vec![1.0, 1.0]), ("b".into(), vec![0.0, 0.0]), ("c".into(), vec![0.5, -0.5])]),
        ],
    )?;
    let pop = Population::from_counts(
        world,
        vec![(RewardParams(vec![2.0, -1.0]), 30), (RewardParams(vec![-1.0, 2.0]), 30)],
    )?;
    let ds = sample_dataset(&pop, 50, 3)?;
    let model = em_fit(ds.records(), pop.world(), 2, &FitConfig::default(), 5, 3)?;
    for (i, h) in model.history.iter().enumerate() {
        println!("iter {i}: {:>2} reassigned, loglik {:.3}", h.changed, h.loglik);
    }
    for (k, p) in model.cluster_params.iter().enumerate() {
        println!("cluster {k}: φ = ({:+.3}, {:+.3})", p.0[0], p.0[1]);
    }
    println!("cluster accuracy {:.3}", cluster_accuracy(&model, ds.hidden_labels())?);
    Ok(())
}
