//! KL-regularized policies on a finite world.
//!
//! For reward `r` and reference `π_ref`, the maximizer of
//! `E_x[E_{y∼π}[r] − β·KL(π ‖ π_ref)]` is the Gibbs policy
//! `π(y|x) ∝ π_ref(y|x)·exp(r(y,x)/β)`; everything here is an exact sum.

use std::fmt::Write as _;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::synthpop::Population;
use crate::world::{FeatureWorld, RewardParams};

pub const ROW_SUM_TOL: f64 = 1e-12;

/// Per-prompt distributions over responses, with the smallest entry cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    table: Vec<Vec<f64>>,
    floor: f64,
}

impl Policy {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::domain("policy has no prompts"));
        }
        let mut floor = f64::INFINITY;
        for (x, row) in table.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::domain(format!("policy row {x} is empty")));
            }
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::domain(format!("policy row {x} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::domain(format!("policy row {x} sums to {s}")));
            }
            floor = row.iter().cloned().fold(floor, f64::min);
        }
        Ok(Self { table, floor })
    }

    pub fn uniform(world: &FeatureWorld) -> Self {
        let table = (0..world.num_prompts())
            .map(|x| {
                let n = world.num_responses(x);
                vec![1.0 / n as f64; n]
            })
            .collect();
        Self::new(table).expect("uniform rows are valid")
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.table[prompt]
    }

    /// c: the smallest probability in the table.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub(crate) fn check_shape(&self, world: &FeatureWorld) -> Result<()> {
        if self.table.len() != world.num_prompts()
            || self
                .table
                .iter()
                .enumerate()
                .any(|(x, row)| row.len() != world.num_responses(x))
        {
            return Err(Error::domain("policy shape does not match the world"));
        }
        Ok(())
    }

    /// JSON object `{prompt: {response: prob}}`, probabilities printed with 17
    /// significant digits, keys in world order.
    pub fn to_json(&self, world: &FeatureWorld) -> Result<String> {
        self.check_shape(world)?;
        let mut s = String::from("{\n");
        for (x, p) in world.prompts().iter().enumerate() {
            write!(s, "  {}: {{", serde_json::to_string(&p.id)?).unwrap();
            for (y, r) in p.responses.iter().enumerate() {
                let sep = if y + 1 < p.responses.len() { ", " } else { "" };
                write!(s, "{}: {:.16e}{sep}", serde_json::to_string(&r.id)?, self.table[x][y]).unwrap();
            }
            s.push('}');
            s.push_str(if x + 1 < world.num_prompts() { ",\n" } else { "\n" });
        }
        s.push('}');
        Ok(s)
    }

    pub fn from_json(s: &str, world: &FeatureWorld) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        let obj = v.as_object().ok_or_else(|| Error::domain("policy JSON must be an object"))?;
        let mut table = Vec::with_capacity(world.num_prompts());
        for p in world.prompts() {
            let row = obj
                .get(&p.id)
                .and_then(Value::as_object)
                .ok_or_else(|| Error::lookup(format!("policy JSON lacks prompt `{}`", p.id)))?;
            table.push(
                p.responses
                    .iter()
                    .map(|r| {
                        row.get(&r.id)
                            .and_then(Value::as_f64)
                            .ok_or_else(|| Error::lookup(format!("policy JSON lacks ({}, {})", p.id, r.id)))
                    })
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        Self::new(table)
    }
}

/// Per-prompt reward vectors `r_φ(·, x)`.
pub fn reward_table(phi: &RewardParams, world: &FeatureWorld) -> Result<Vec<Vec<f64>>> {
    phi.check_dim(world)?;
    Ok(world
        .prompts()
        .iter()
        .map(|p| p.responses.iter().map(|r| phi.dot(&r.features)).collect())
        .collect())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!("beta must be positive and finite, got {beta}")));
    }
    Ok(())
}

/// Gibbs policy with its per-prompt log-partition values `ln Z(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsPolicy {
    pub policy: Policy,
    pub log_partition: Vec<f64>,
}

/// `π(y|x) = ref(y|x)·exp(r(y,x)/β) / Z(x)` for an arbitrary reward table.
pub fn gibbs_from_rewards(rewards: &[Vec<f64>], reference: &Policy, beta: f64) -> Result<GibbsPolicy> {
    check_beta(beta)?;
    if reference.floor() <= 0.0 {
        return Err(Error::domain("reference policy must be strictly positive"));
    }
    if rewards.len() != reference.table().len() {
        return Err(Error::domain("reward table and reference policy disagree on prompts"));
    }
    let mut table = Vec::with_capacity(rewards.len());
    let mut log_z = Vec::with_capacity(rewards.len());
    for (r, q) in rewards.iter().zip(reference.table()) {
        if r.len() != q.len() {
            return Err(Error::domain("reward row and reference row lengths differ"));
        }
        let logits: Vec<f64> = r.iter().zip(q).map(|(ri, qi)| qi.ln() + ri / beta).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::domain("non-finite reward in Gibbs policy"));
        }
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        log_z.push(m + s.ln());
        table.push(w.into_iter().map(|wi| wi / s).collect());
    }
    Ok(GibbsPolicy {
        policy: Policy::new(table)?,
        log_partition: log_z,
    })
}

pub fn gibbs_policy_with_partition(
    phi: &RewardParams,
    reference: &Policy,
    beta: f64,
    world: &FeatureWorld,
) -> Result<GibbsPolicy> {
    reference.check_shape(world)?;
    gibbs_from_rewards(&reward_table(phi, world)?, reference, beta)
}

/// The closed-form maximizer of the KL-regularized objective under `r_φ`.
pub fn gibbs_policy(phi: &RewardParams, reference: &Policy, beta: f64, world: &FeatureWorld) -> Result<Policy> {
    Ok(gibbs_policy_with_partition(phi, reference, beta, world)?.policy)
}

/// `KL(π(·|x) ‖ ref(·|x))` for every prompt.
pub fn kl_rows(pi: &Policy, reference: &Policy) -> Result<Vec<f64>> {
    if pi.table().len() != reference.table().len() {
        return Err(Error::domain("policies disagree on prompts"));
    }
    pi.table()
        .iter()
        .zip(reference.table())
        .enumerate()
        .map(|(x, (p, q))| {
            if p.len() != q.len() {
                return Err(Error::domain("policy rows differ in length"));
            }
            let mut kl = 0.0;
            for (pi, qi) in p.iter().zip(q) {
                if *pi > 0.0 {
                    if *qi <= 0.0 {
                        return Err(Error::domain(format!(
                            "policy puts mass where the reference is zero (prompt {x})"
                        )));
                    }
                    kl += pi * (pi / qi).ln();
                }
            }
            Ok(kl)
        })
        .collect()
}

/// Value of the KL-regularized objective and its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub expected_reward: f64,
    pub kl: f64,
}

/// Prompt-weighted `E_π[r]` for a reward table.
pub fn expected_reward_table(pi: &Policy, rewards: &[Vec<f64>], world: &FeatureWorld) -> f64 {
    pi.table()
        .iter()
        .zip(rewards)
        .enumerate()
        .map(|(x, (p, r))| world.prompt_weight(x) * p.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Prompt-weighted `KL(π ‖ ref)`.
pub fn mean_kl(pi: &Policy, reference: &Policy, world: &FeatureWorld) -> Result<f64> {
    Ok(kl_rows(pi, reference)?
        .into_iter()
        .enumerate()
        .map(|(x, k)| world.prompt_weight(x) * k)
        .sum())
}

/// `F = E_x[E_{y∼π}[r_φ(y,x)] − β·KL(π(·|x) ‖ ref(·|x))]`.
pub fn regularized_objective(
    pi: &Policy,
    phi: &RewardParams,
    reference: &Policy,
    beta: f64,
    world: &FeatureWorld,
) -> Result<Objective> {
    check_beta(beta)?;
    pi.check_shape(world)?;
    reference.check_shape(world)?;
    let expected_reward = expected_reward_table(pi, &reward_table(phi, world)?, world);
    let kl = mean_kl(pi, reference, world)?;
    Ok(Objective {
        value: expected_reward - beta * kl,
        expected_reward,
        kl,
    })
}

/// `F_u(π_u*) − F_u(π)`: group `u`'s shortfall under `π` relative to its own
/// Gibbs optimum.
pub fn align_gap(pi: &Policy, u: usize, pop: &Population, reference: &Policy, beta: f64) -> Result<f64> {
    let world = pop.world();
    let phi = &pop.group(u)?.phi_star;
    let own = gibbs_policy(phi, reference, beta, world)?;
    let best = regularized_objective(&own, phi, reference, beta, world)?.value;
    let here = regularized_objective(pi, phi, reference, beta, world)?.value;
    Ok(best - here)
}

/// Largest per-prompt total variation distance between two policies.
pub fn total_variation(a: &Policy, b: &Policy) -> f64 {
    a.table()
        .iter()
        .zip(b.table())
        .map(|(p, q)| 0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
