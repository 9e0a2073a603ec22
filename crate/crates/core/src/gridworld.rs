//! KL-regularized planning on a deterministic tabular grid.
//!
//! Labeled cells (`A`, `B`, ...) are terminal. Their reward is a one-off
//! payoff collected on arrival, so a goal `d` moves away is worth `γ^d`
//! times its magnitude under a greedy policy.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxmin::project_simplex;
use crate::rng::substream;

pub const MAX_SWEEPS: usize = 100_000;
pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const ACTIONS: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl From<(usize, usize)> for Cell {
    fn from((row, col): (usize, usize)) -> Self {
        Self { row, col }
    }
}

impl From<Cell> for (usize, usize) {
    fn from(c: Cell) -> Self {
        (c.row, c.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    width: usize,
    height: usize,
    walls: BTreeSet<Cell>,
    start: Cell,
    terminals: BTreeSet<Cell>,
    discount: f64,
    max_horizon: usize,
    regions: BTreeMap<char, BTreeSet<Cell>>,
    states: Vec<Cell>,
    index: BTreeMap<Cell, usize>,
}

impl GridSpec {
    pub fn new(
        width: usize,
        height: usize,
        walls: BTreeSet<Cell>,
        start: Cell,
        terminals: BTreeSet<Cell>,
        discount: f64,
        max_horizon: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Structural("grid must be at least 1x1".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::domain(format!("discount must lie in (0, 1), got {discount}")));
        }
        if max_horizon == 0 {
            return Err(Error::domain("max_horizon must be positive"));
        }
        let inside = |c: &Cell| c.row < height && c.col < width;
        if !inside(&start) || walls.contains(&start) {
            return Err(Error::Structural(format!("start {start:?} is out of bounds or a wall")));
        }
        if let Some(t) = terminals.iter().find(|t| !inside(t) || walls.contains(t)) {
            return Err(Error::Structural(format!("terminal {t:?} is out of bounds or a wall")));
        }
        let states: Vec<Cell> = (0..height)
            .flat_map(|r| (0..width).map(move |c| Cell::new(r, c)))
            .filter(|c| !walls.contains(c))
            .collect();
        let index = states.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        Ok(Self {
            width,
            height,
            walls,
            start,
            terminals,
            discount,
            max_horizon,
            regions: BTreeMap::new(),
            states,
            index,
        })
    }

    /// Attaches labeled regions. Region cells must be open.
    pub fn with_regions(mut self, regions: BTreeMap<char, BTreeSet<Cell>>) -> Result<Self> {
        for (label, cells) in &regions {
            if let Some(c) = cells.iter().find(|c| !self.index.contains_key(c)) {
                return Err(Error::Structural(format!("region {label} cell {c:?} is not an open cell")));
            }
        }
        self.regions = regions;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn max_horizon(&self) -> usize {
        self.max_horizon
    }

    pub fn walls(&self) -> &BTreeSet<Cell> {
        &self.walls
    }

    pub fn terminals(&self) -> &BTreeSet<Cell> {
        &self.terminals
    }

    pub fn regions(&self) -> &BTreeMap<char, BTreeSet<Cell>> {
        &self.regions
    }

    pub fn is_terminal(&self, c: Cell) -> bool {
        self.terminals.contains(&c)
    }

    /// Open cells in row-major order.
    pub fn states(&self) -> &[Cell] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, c: Cell) -> Result<usize> {
        self.index
            .get(&c)
            .copied()
            .ok_or_else(|| Error::lookup(format!("cell {c:?} is not an open cell")))
    }

    /// Deterministic move; leaving the grid or hitting a wall stays put.
    pub fn step(&self, c: Cell, a: Action) -> Cell {
        let next = match a {
            Action::Up if c.row > 0 => Cell::new(c.row - 1, c.col),
            Action::Down if c.row + 1 < self.height => Cell::new(c.row + 1, c.col),
            Action::Left if c.col > 0 => Cell::new(c.row, c.col - 1),
            Action::Right if c.col + 1 < self.width => Cell::new(c.row, c.col + 1),
            _ => c,
        };
        if self.walls.contains(&next) {
            c
        } else {
            next
        }
    }

    fn successors(&self) -> Vec<[usize; NUM_ACTIONS]> {
        self.states
            .iter()
            .map(|&c| ACTIONS.map(|a| self.index[&self.step(c, a)]))
            .collect()
    }
}

/// Per-(state, action) rewards for one group, indexed like `GridSpec::states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRewardGrid {
    pub group_id: usize,
    pub reward: Vec<[f64; NUM_ACTIONS]>,
}

impl GroupRewardGrid {
    pub fn new(grid: &GridSpec, group_id: usize, reward: Vec<[f64; NUM_ACTIONS]>) -> Result<Self> {
        if reward.len() != grid.num_states() {
            return Err(Error::Structural(format!(
                "reward table has {} rows for {} states",
                reward.len(),
                grid.num_states()
            )));
        }
        if reward.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::domain("rewards must be finite"));
        }
        Ok(Self { group_id, reward })
    }

    pub fn zeros(grid: &GridSpec, group_id: usize) -> Self {
        Self {
            group_id,
            reward: vec![[0.0; NUM_ACTIONS]; grid.num_states()],
        }
    }

    /// Terminal payoffs per region label plus a constant reward on every
    /// non-terminal move.
    pub fn from_regions(
        grid: &GridSpec,
        group_id: usize,
        magnitudes: &BTreeMap<char, f64>,
        step_reward: f64,
    ) -> Result<Self> {
        let mut reward = vec![[0.0; NUM_ACTIONS]; grid.num_states()];
        for (s, &c) in grid.states().iter().enumerate() {
            if !grid.is_terminal(c) {
                reward[s] = [step_reward; NUM_ACTIONS];
            }
        }
        for (label, &m) in magnitudes {
            let cells = grid
                .regions()
                .get(label)
                .ok_or_else(|| Error::lookup(format!("no region labeled {label}")))?;
            for &c in cells {
                reward[grid.state_index(c)?] = [m; NUM_ACTIONS];
            }
        }
        Self::new(grid, group_id, reward)
    }

    pub fn r_max(&self) -> f64 {
        self.reward.iter().flatten().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `Σ_u λ_u r_u`, carrying group id 0.
    pub fn weighted(rewards: &[GroupRewardGrid], lambda: &[f64]) -> Result<Self> {
        let first = rewards.first().ok_or_else(|| Error::domain("need at least one reward grid"))?;
        if lambda.len() != rewards.len() {
            return Err(Error::domain(format!("{} weights for {} groups", lambda.len(), rewards.len())));
        }
        let mut reward = vec![[0.0; NUM_ACTIONS]; first.reward.len()];
        for (g, &l) in rewards.iter().zip(lambda) {
            for (acc, row) in reward.iter_mut().zip(&g.reward) {
                for a in 0..NUM_ACTIONS {
                    acc[a] += l * row[a];
                }
            }
        }
        Ok(Self { group_id: 0, reward })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPolicyValue {
    pub policy: Vec<[f64; NUM_ACTIONS]>,
    pub values: Vec<f64>,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

impl GridPolicyValue {
    pub fn value_at(&self, grid: &GridSpec, c: Cell) -> Result<f64> {
        Ok(self.values[grid.state_index(c)?])
    }
}

fn check_ref(ref_action: &[f64; NUM_ACTIONS]) -> Result<()> {
    let s: f64 = ref_action.iter().sum();
    if ref_action.iter().any(|p| !(*p > 0.0)) || (s - 1.0).abs() > 1e-12 {
        return Err(Error::domain("reference action distribution must be positive and sum to 1"));
    }
    Ok(())
}

pub fn uniform_actions() -> [f64; NUM_ACTIONS] {
    [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS]
}

/// Returns `(β·ln Σ_a ref_a·exp(q_a/β), normalized ref·exp(q/β))`.
fn soft_max(q: &[f64; NUM_ACTIONS], ref_action: &[f64; NUM_ACTIONS], beta: f64) -> (f64, [f64; NUM_ACTIONS]) {
    let logits: [f64; NUM_ACTIONS] = std::array::from_fn(|a| ref_action[a].ln() + q[a] / beta);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: [f64; NUM_ACTIONS] = std::array::from_fn(|a| (logits[a] - m).exp());
    let z: f64 = w.iter().sum();
    (beta * (m + z.ln()), w.map(|x| x / z))
}

/// Soft Bellman iteration to a sup-norm fixed point within `tol`.
pub fn soft_value_iteration(
    grid: &GridSpec,
    reward: &GroupRewardGrid,
    beta: f64,
    ref_action: &[f64; NUM_ACTIONS],
    tol: f64,
) -> Result<GridPolicyValue> {
    if !(beta > 0.0) {
        return Err(Error::domain(format!("beta must be positive, got {beta}")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tol must be positive, got {tol}")));
    }
    check_ref(ref_action)?;
    if reward.reward.len() != grid.num_states() {
        return Err(Error::Structural("reward table does not match grid".into()));
    }
    let next = grid.successors();
    let gamma = grid.discount();
    let n = grid.num_states();
    let terminal: Vec<bool> = grid.states().iter().map(|&c| grid.is_terminal(c)).collect();
    let q_of = |v: &[f64], s: usize| -> [f64; NUM_ACTIONS] {
        std::array::from_fn(|a| {
            let cont = if terminal[s] { 0.0 } else { gamma * v[next[s][a]] };
            reward.reward[s][a] + cont
        })
    };
    let mut v = vec![0.0; n];
    let mut residuals = Vec::new();
    for _ in 0..MAX_SWEEPS {
        let fresh: Vec<f64> = (0..n).map(|s| soft_max(&q_of(&v, s), ref_action, beta).0).collect();
        let diff = fresh.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = fresh;
        residuals.push(diff);
        if diff <= tol {
            let policy = (0..n).map(|s| soft_max(&q_of(&v, s), ref_action, beta).1).collect();
            return Ok(GridPolicyValue {
                policy,
                values: v,
                residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        context: "soft value iteration".into(),
        iters: MAX_SWEEPS,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        last: Some(v),
    })
}

/// Unregularized optimal values by plain value iteration.
pub fn optimal_values(grid: &GridSpec, reward: &GroupRewardGrid, tol: f64) -> Result<Vec<f64>> {
    let next = grid.successors();
    let gamma = grid.discount();
    let n = grid.num_states();
    let mut v = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let fresh: Vec<f64> = (0..n)
            .map(|s| {
                let term = grid.is_terminal(grid.states()[s]);
                (0..NUM_ACTIONS)
                    .map(|a| reward.reward[s][a] + if term { 0.0 } else { gamma * v[next[s][a]] })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let diff = fresh.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = fresh;
        if diff <= tol {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        context: "value iteration".into(),
        iters: MAX_SWEEPS,
        residual: f64::NAN,
        last: Some(v),
    })
}

fn check_policy(grid: &GridSpec, policy: &[[f64; NUM_ACTIONS]]) -> Result<()> {
    if policy.len() != grid.num_states() {
        return Err(Error::Structural(format!(
            "policy has {} rows for {} states",
            policy.len(),
            grid.num_states()
        )));
    }
    for (s, row) in policy.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("policy row {s} is not a distribution")));
        }
    }
    Ok(())
}

/// Solves `v = r_π + γ·P_π v` (no continuation past terminals).
fn solve_linear(grid: &GridSpec, policy: &[[f64; NUM_ACTIONS]], per_state: &[f64]) -> Result<Vec<f64>> {
    let next = grid.successors();
    let n = grid.num_states();
    let gamma = grid.discount();
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        if grid.is_terminal(grid.states()[s]) {
            continue;
        }
        for a in 0..NUM_ACTIONS {
            m[(s, next[s][a])] -= gamma * policy[s][a];
        }
    }
    let v = m
        .lu()
        .solve(&DVector::from_column_slice(per_state))
        .ok_or_else(|| Error::Structural("policy evaluation system is singular".into()))?;
    Ok(v.iter().copied().collect())
}

/// Exact expected discounted return of `policy` from the start cell.
pub fn evaluate_policy(grid: &GridSpec, policy: &[[f64; NUM_ACTIONS]], reward: &GroupRewardGrid) -> Result<f64> {
    check_policy(grid, policy)?;
    let r: Vec<f64> = policy
        .iter()
        .zip(&reward.reward)
        .map(|(p, r)| p.iter().zip(r).map(|(a, b)| a * b).sum())
        .collect();
    Ok(solve_linear(grid, policy, &r)?[grid.state_index(grid.start())?])
}

/// Discounted sum of per-state `KL(π(·|s) ‖ ref)` along the policy, from the start cell.
pub fn discounted_kl(grid: &GridSpec, policy: &[[f64; NUM_ACTIONS]], ref_action: &[f64; NUM_ACTIONS]) -> Result<f64> {
    check_policy(grid, policy)?;
    check_ref(ref_action)?;
    let k: Vec<f64> = policy
        .iter()
        .map(|p| {
            p.iter()
                .zip(ref_action)
                .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 })
                .sum()
        })
        .collect();
    Ok(solve_linear(grid, policy, &k)?[grid.state_index(grid.start())?])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMaxMin {
    pub lambda: Vec<f64>,
    pub solution: GridPolicyValue,
    /// Soft value at the start cell under the λ-weighted reward.
    pub dual_value: f64,
    /// Exact unregularized return per group.
    pub returns: Vec<f64>,
    /// `min_u J_u − β·KL`.
    pub primal_value: f64,
    pub duality_gap: f64,
    pub iterations: usize,
}

const GRID_MAXMIN_ITERS: usize = 5_000;

/// Minimizes the start-state dual value over the group simplex by projected
/// gradient descent; the gradient is the vector of group returns.
pub fn grid_maxmin(
    grid: &GridSpec,
    rewards: &[GroupRewardGrid],
    beta: f64,
    ref_action: &[f64; NUM_ACTIONS],
    tol: f64,
) -> Result<GridMaxMin> {
    if rewards.is_empty() {
        return Err(Error::domain("grid maxmin needs at least one group"));
    }
    let inner_tol = 1e-13;
    let start = grid.state_index(grid.start())?;
    let eval = |lambda: &[f64]| -> Result<(f64, GridPolicyValue, Vec<f64>, f64)> {
        let mixed = GroupRewardGrid::weighted(rewards, lambda)?;
        let sol = soft_value_iteration(grid, &mixed, beta, ref_action, inner_tol)?;
        let returns = rewards
            .iter()
            .map(|r| evaluate_policy(grid, &sol.policy, r))
            .collect::<Result<Vec<_>>>()?;
        let kl = discounted_kl(grid, &sol.policy, ref_action)?;
        Ok((sol.values[start], sol, returns, kl))
    };
    let k = rewards.len();
    let mut lambda = vec![1.0 / k as f64; k];
    let mut cur = eval(&lambda)?;
    let mut step = 1.0;
    for it in 0..GRID_MAXMIN_ITERS {
        let min_ret = cur.2.iter().cloned().fold(f64::INFINITY, f64::min);
        let weighted: f64 = lambda.iter().zip(&cur.2).map(|(l, j)| l * j).sum();
        let gap = weighted - min_ret;
        if gap <= tol {
            let (dual_value, solution, returns, kl) = cur;
            return Ok(GridMaxMin {
                lambda,
                solution,
                dual_value,
                primal_value: min_ret - beta * kl,
                returns,
                duality_gap: gap,
                iterations: it,
            });
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial = project_simplex(&lambda.iter().zip(&cur.2).map(|(l, g)| l - step * g).collect::<Vec<_>>());
            let delta: Vec<f64> = trial.iter().zip(&lambda).map(|(a, b)| a - b).collect();
            let lin: f64 = delta.iter().zip(&cur.2).map(|(d, g)| d * g).sum();
            let sq: f64 = delta.iter().map(|d| d * d).sum();
            let cand = eval(&trial)?;
            if cand.0 <= cur.0 + lin + sq / (2.0 * step) + 1e-11 * cur.0.abs().max(1.0) {
                lambda = trial;
                cur = cand;
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NonConvergence {
        context: "grid maxmin".into(),
        iters: GRID_MAXMIN_ITERS,
        residual: f64::NAN,
        last: Some(lambda),
    })
}

/// Samples a trajectory from the start until a terminal cell or `max_steps` moves.
pub fn rollout(grid: &GridSpec, policy: &[[f64; NUM_ACTIONS]], seed: u64, max_steps: usize) -> Result<Vec<Cell>> {
    check_policy(grid, policy)?;
    let mut rng = substream(seed, "rollout", 0);
    let mut c = grid.start();
    let mut path = vec![c];
    for _ in 0..max_steps {
        if grid.is_terminal(c) {
            break;
        }
        let row = &policy[grid.state_index(c)?];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = ACTIONS[NUM_ACTIONS - 1];
        for (a, p) in ACTIONS.iter().zip(row) {
            acc += p;
            if u < acc {
                pick = *a;
                break;
            }
        }
        c = grid.step(c, pick);
        path.push(c);
    }
    Ok(path)
}

/// Labels of the regions a trajectory enters.
pub fn regions_visited(grid: &GridSpec, path: &[Cell]) -> BTreeSet<char> {
    grid.regions()
        .iter()
        .filter(|(_, cells)| path.iter().any(|c| cells.contains(c)))
        .map(|(l, _)| *l)
        .collect()
}

pub fn trajectory_to_json(path: &[Cell]) -> String {
    serde_json::to_string(path).expect("cells always serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MapGroup {
    name: String,
    rewards: BTreeMap<char, f64>,
    #[serde(default)]
    step_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapMeta {
    discount: f64,
    max_horizon: usize,
    beta: f64,
    groups: Vec<MapGroup>,
}

/// A parsed map: the grid, one reward grid per group, group names, and the default β.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub grid: GridSpec,
    pub rewards: Vec<GroupRewardGrid>,
    pub group_names: Vec<String>,
    pub beta: f64,
}

pub const DEFAULT_MAP: &str = include_str!("../maps/default.map");

impl GridMap {
    /// Parses a map: grid rows (`#` wall, `S` start, `.` floor, other
    /// uppercase letters terminal regions) followed by a JSON block with
    /// `discount`, `max_horizon`, `beta` and per-group region rewards.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::config("map", m);
        let split = text.find('{').ok_or_else(|| bad("missing JSON reward block".into()))?;
        let rows: Vec<&str> = text[..split].lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let meta: MapMeta = serde_json::from_str(&text[split..]).map_err(|e| bad(format!("reward block: {e}")))?;
        let height = rows.len();
        if height == 0 {
            return Err(bad("no grid rows".into()));
        }
        let width = rows[0].chars().count();
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(bad("grid rows differ in length".into()));
        }
        let mut walls = BTreeSet::new();
        let mut regions: BTreeMap<char, BTreeSet<Cell>> = BTreeMap::new();
        let mut start = None;
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::new(r, c);
                match ch {
                    '#' => {
                        walls.insert(cell);
                    }
                    '.' => {}
                    'S' => {
                        if start.replace(cell).is_some() {
                            return Err(bad("more than one start cell".into()));
                        }
                    }
                    l if l.is_ascii_uppercase() => {
                        regions.entry(l).or_default().insert(cell);
                    }
                    other => return Err(bad(format!("unknown map character {other:?} at ({r}, {c})"))),
                }
            }
        }
        let start = start.ok_or_else(|| bad("no start cell".into()))?;
        let terminals = regions.values().flatten().copied().collect();
        let grid = GridSpec::new(width, height, walls, start, terminals, meta.discount, meta.max_horizon)
            .map_err(|e| bad(e.to_string()))?
            .with_regions(regions)?;
        if !(meta.beta > 0.0) {
            return Err(Error::config("map.beta", "must be positive"));
        }
        if meta.groups.is_empty() {
            return Err(Error::config("map.groups", "at least one group is required"));
        }
        let rewards = meta
            .groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                GroupRewardGrid::from_regions(&grid, i, &g.rewards, g.step_reward)
                    .map_err(|e| Error::config(format!("map.groups[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            rewards,
            group_names: meta.groups.into_iter().map(|g| g.name).collect(),
            beta: meta.beta,
        })
    }

    pub fn default_map() -> Self {
        Self::parse(DEFAULT_MAP).expect("shipped map parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corridor(len: usize, discount: f64) -> (GridSpec, GroupRewardGrid) {
        let map = format!(
            "S{}G\n{{\"discount\": {discount}, \"max_horizon\": 50, \"beta\": 1.0, \"groups\": [{{\"name\": \"g\", \"rewards\": {{\"G\": 1.0}}}}]}}",
            ".".repeat(len - 1)
        );
        let m = GridMap::parse(&map).unwrap();
        (m.grid, m.rewards[0].clone())
    }

    fn open_grid() -> GridSpec {
        GridSpec::new(4, 3, BTreeSet::new(), Cell::new(1, 1), BTreeSet::new(), 0.9, 10).unwrap()
    }

    #[test]
    fn moves_and_walls() {
        let walls: BTreeSet<Cell> = [Cell::new(0, 1)].into();
        let g = GridSpec::new(3, 2, walls.clone(), Cell::new(0, 0), BTreeSet::new(), 0.9, 5).unwrap();
        assert_eq!(g.step(Cell::new(0, 0), Action::Right), Cell::new(0, 0));
        assert_eq!(g.step(Cell::new(0, 0), Action::Up), Cell::new(0, 0));
        assert_eq!(g.step(Cell::new(0, 0), Action::Down), Cell::new(1, 0));
        assert_eq!(g.num_states(), 5);
        assert!(GridSpec::new(3, 2, walls, Cell::new(0, 1), BTreeSet::new(), 0.9, 5).is_err());
        assert!(GridSpec::new(3, 2, BTreeSet::new(), Cell::new(0, 0), BTreeSet::new(), 1.0, 5).is_err());
    }

    #[test]
    fn zero_reward_is_reference() {
        let g = open_grid();
        let sol = soft_value_iteration(&g, &GroupRewardGrid::zeros(&g, 0), 1.0, &uniform_actions(), 1e-12).unwrap();
        assert!(sol.values.iter().all(|v| v.abs() < 1e-15));
        assert!(sol.policy.iter().flatten().all(|p| (p - 0.2).abs() < 1e-15));
        assert_eq!(evaluate_policy(&g, &sol.policy, &GroupRewardGrid::zeros(&g, 0)).unwrap(), 0.0);
    }

    #[test]
    fn near_greedy_values_match_plain_iteration() {
        let (g, r) = corridor(4, 0.9);
        let exact = optimal_values(&g, &r, 1e-14).unwrap();
        let s = g.state_index(g.start()).unwrap();
        assert!((exact[s] - 0.9f64.powi(4)).abs() < 1e-12);
        let mut prev = f64::NEG_INFINITY;
        for beta in [1.0, 0.1, 0.01, 0.001, 1e-4] {
            let sol = soft_value_iteration(&g, &r, beta, &uniform_actions(), 1e-12).unwrap();
            let v = sol.values[s];
            assert!(v >= prev - 1e-12, "not monotone at β = {beta}");
            assert!(v <= exact[s] + 1e-12);
            // per-step loss is at most β·ln|A|
            assert!(exact[s] - v <= beta * (NUM_ACTIONS as f64).ln() / (1.0 - 0.9) + 1e-12);
            prev = v;
        }
        let sol = soft_value_iteration(&g, &r, 1e-4, &uniform_actions(), 1e-12).unwrap();
        for (a, b) in sol.values.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn large_beta_is_reference() {
        let m = GridMap::default_map();
        let sol = soft_value_iteration(&m.grid, &m.rewards[0], 1e3, &uniform_actions(), 1e-12).unwrap();
        assert!(sol.policy.iter().flatten().all(|p| (p - 0.2).abs() < 1e-4));
    }

    #[test]
    fn sweeps_contract() {
        let m = GridMap::default_map();
        let sol = soft_value_iteration(&m.grid, &m.rewards[0], 0.1, &uniform_actions(), 1e-12).unwrap();
        let g = m.grid.discount();
        for w in sol.residuals.windows(2).skip(5) {
            if w[0] > 1e-10 {
                assert!(w[1] <= (g + 1e-6) * w[0], "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn adjacent_goal_returns_discount() {
        let (g, r) = corridor(1, 0.95);
        let mut greedy = vec![[0.0; NUM_ACTIONS]; g.num_states()];
        for row in greedy.iter_mut() {
            row[3] = 1.0;
        }
        assert!((evaluate_policy(&g, &greedy, &r).unwrap() - 0.95).abs() < 1e-15);
        let p = rollout(&g, &greedy, 3, 10).unwrap();
        assert_eq!(p, vec![Cell::new(0, 0), Cell::new(0, 1)]);
    }

    #[test]
    fn uniform_walk_runs_full_length() {
        let g = open_grid();
        let p = rollout(&g, &vec![uniform_actions(); g.num_states()], 11, 25).unwrap();
        assert_eq!(p.len(), 26);
        assert_eq!(p, rollout(&g, &vec![uniform_actions(); g.num_states()], 11, 25).unwrap());
    }

    #[test]
    fn single_group_maxmin_is_soft_iteration() {
        let m = GridMap::default_map();
        let one = grid_maxmin(&m.grid, &m.rewards[..1], m.beta, &uniform_actions(), 1e-9).unwrap();
        assert_eq!(one.lambda, vec![1.0]);
        let direct = soft_value_iteration(&m.grid, &m.rewards[0], m.beta, &uniform_actions(), 1e-12).unwrap();
        let s = m.grid.state_index(m.grid.start()).unwrap();
        assert!((one.dual_value - direct.values[s]).abs() < 1e-9);
    }

    #[test]
    fn symmetric_maxmin() {
        let m = GridMap::default_map();
        let mm = grid_maxmin(&m.grid, &m.rewards, m.beta, &uniform_actions(), 1e-9).unwrap();
        assert!((mm.lambda[0] - 0.5).abs() < 1e-6);
        assert!((mm.returns[0] - mm.returns[1]).abs() <= 0.01 * mm.returns[0].abs());
        assert!((mm.dual_value - mm.primal_value).abs() < 1e-8);
        let mut hits = BTreeMap::new();
        for seed in 0..100 {
            let path = rollout(&m.grid, &mm.solution.policy, seed, m.grid.max_horizon()).unwrap();
            for l in regions_visited(&m.grid, &path) {
                *hits.entry(l).or_insert(0usize) += 1;
            }
        }
        let (a, b) = (hits[&'A'] as f64, hits[&'B'] as f64);
        assert!((a - b).abs() <= 0.2 * a.max(b), "{hits:?}");
    }

    #[test]
    fn asymmetric_maxmin_certifies() {
        let text = DEFAULT_MAP.replace("\"B\": 1.0", "\"B\": 0.6");
        let m = GridMap::parse(&text).unwrap();
        let mm = grid_maxmin(&m.grid, &m.rewards, m.beta, &uniform_actions(), 1e-6).unwrap();
        eprintln!("{} iterations, λ = {:?}", mm.iterations, mm.lambda);
        assert!(mm.duality_gap <= 1e-6);
        assert!(mm.lambda[1] > mm.lambda[0]);
        assert!((mm.dual_value - mm.primal_value).abs() <= 1e-6);
    }

    #[test]
    fn dual_is_convex_in_lambda() {
        let m = GridMap::default_map();
        let s = m.grid.state_index(m.grid.start()).unwrap();
        let vals: Vec<f64> = (0..=20)
            .map(|i| {
                let l = i as f64 / 20.0;
                let mixed = GroupRewardGrid::weighted(&m.rewards, &[l, 1.0 - l]).unwrap();
                soft_value_iteration(&m.grid, &mixed, m.beta, &uniform_actions(), 1e-12).unwrap().values[s]
            })
            .collect();
        for w in vals.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
        }
    }

    #[test]
    fn single_group_rollouts_reach_own_goal() {
        let m = GridMap::default_map();
        for (u, label) in [(0, 'A'), (1, 'B')] {
            let sol = soft_value_iteration(&m.grid, &m.rewards[u], m.beta, &uniform_actions(), 1e-12).unwrap();
            let path = rollout(&m.grid, &sol.policy, 0, m.grid.max_horizon()).unwrap();
            assert_eq!(regions_visited(&m.grid, &path), [label].into());
        }
    }

    #[test]
    fn map_errors() {
        assert!(GridMap::parse("S.\n").is_err());
        assert!(GridMap::parse("..\n{\"discount\":0.9,\"max_horizon\":5,\"beta\":1,\"groups\":[]}").is_err());
        let e = GridMap::parse("SA?\n{\"discount\":0.9,\"max_horizon\":5,\"beta\":1,\"groups\":[]}").unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
        assert!(GridMap::parse("SA\n{\"discount\":0.9,\"max_horizon\":5,\"beta\":1,\"groups\":[{\"name\":\"x\",\"rewards\":{\"Q\":1}}]}").is_err());
    }

    #[test]
    fn trajectory_json() {
        assert_eq!(trajectory_to_json(&[Cell::new(1, 2), Cell::new(0, 2)]), "[[1,2],[0,2]]");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn soft_policy_rows_are_distributions(beta in 0.01f64..5.0, mag in -2.0f64..2.0) {
            let text = DEFAULT_MAP.replace("\"A\": 1.0", &format!("\"A\": {mag}"));
            let m = GridMap::parse(&text).unwrap();
            let sol = soft_value_iteration(&m.grid, &m.rewards[0], beta, &uniform_actions(), 1e-10).unwrap();
            for row in &sol.policy {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
