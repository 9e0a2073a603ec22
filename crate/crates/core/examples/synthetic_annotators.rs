//! Sample a two-group annotator dataset and write it as JSON Lines.
//!
//! `cargo run --example synthetic_annotators`

use diverse_prefs::synthpop::{mixture_pref_prob, sample_dataset, write_records_jsonl, Population, Winner};
use diverse_prefs::world::enumerate_comparisons;

fn main() -> diverse_prefs::Result<()> {
    let pop = Population::two_arm(20);
    let z = enumerate_comparisons(pop.world())[0];
    println!("mixture P(y0 > y1) = {:.6}", mixture_pref_prob(&pop, &z)?);

    let ds = sample_dataset(&pop, 100, 7)?;
    for g in 0..pop.num_groups() {
        let (wins, total) = ds
            .records()
            .iter()
            .filter(|r| ds.hidden_labels().get(r.annotator_id) == Some(g))
            .fold((0, 0), |(w, n), r| (w + usize::from(r.winner == Winner::First), n + 1));
        println!("group {g}: {wins}/{total} records prefer y0");
    }

    let mut buf = Vec::new();
    write_records_jsonl(&ds.records()[..3], pop.world(), &mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}
