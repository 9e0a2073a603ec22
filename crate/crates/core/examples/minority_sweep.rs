//! Single-reward accuracy per group as the majority:minority ratio grows.
//!
//! `cargo run --example minority_sweep`

use diverse_prefs::analysis::{minority_sweep, summarize_sweep, sweep_instance, SweepConfig};

fn main() -> diverse_prefs::Result<()> {
    let (world, params) = sweep_instance();
    let rows = minority_sweep(&world, &params, &SweepConfig::default())?;
    println!("ratio  total  majority  minority  minG(single)  minG(maxmin)");
    for s in summarize_sweep(&rows) {
        println!(
            "{:>3}:1  {:.3}  {:.3}     {:.3}     {:>8.4}      {:>8.4}",
            s.ratio, s.acc_total, s.acc_majority, s.acc_minority, s.util_min_single, s.util_min_maxmin
        );
    }
    Ok(())
}
