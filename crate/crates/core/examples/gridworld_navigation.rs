//! Two groups want the vehicle at opposite corners; each group's own policy
//! heads to its corner while the max-min policy balances both returns.
//!
//! `cargo run --example gridworld_navigation`

use diverse_prefs::gridworld::{grid_maxmin, regions_visited, rollout, soft_value_iteration, uniform_actions, GridMap};

fn main() -> diverse_prefs::Result<()> {
    let map = GridMap::default_map();
    let grid = &map.grid;
    let refa = uniform_actions();
    for (u, name) in map.group_names.iter().enumerate() {
        let sol = soft_value_iteration(grid, &map.rewards[u], map.beta, &refa, 1e-12)?;
        let path = rollout(grid, &sol.policy, 0, grid.max_horizon())?;
        println!("group {name}: {} steps, visits {:?}", path.len() - 1, regions_visited(grid, &path));
    }
    let mm = grid_maxmin(grid, &map.rewards, map.beta, &refa, 1e-9)?;
    println!("maxmin λ = {:?}, returns = {:?}", mm.lambda, mm.returns);
    let mut hits = [0usize; 2];
    for seed in 0..100 {
        let v = regions_visited(grid, &rollout(grid, &mm.solution.policy, seed, grid.max_horizon())?);
        hits[0] += usize::from(v.contains(&'A'));
        hits[1] += usize::from(v.contains(&'B'));
    }
    println!("maxmin rollouts over 100 seeds: A {} times, B {} times", hits[0], hits[1]);
    Ok(())
}
