//! Max-min (egalitarian) alignment:
//! `max_π min_u E_π[r_u] − β·KL(π ‖ ref)`.
//!
//! Two solvers. [`maxmin_iterate`] repeatedly picks the worst-off group and
//! takes one exact mirror-ascent step on that group's regularized objective.
//! [`maxmin_dual`] minimizes the convex dual over group weights λ, whose inner
//! maximizer is the Gibbs policy of the λ-mixed reward, and certifies the
//! result with the duality gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{expected_reward_table, gibbs_from_rewards, mean_kl, reward_table, Policy};
use crate::synthpop::Population;
use crate::world::FeatureWorld;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Iterate,
    Dual,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMinConfig {
    pub steps: usize,
    pub step_size0: f64,
    pub tol: f64,
    pub mode: SolverMode,
}

impl Default for MaxMinConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            step_size0: 1.0,
            tol: 1e-6,
            mode: SolverMode::Both,
        }
    }
}

impl MaxMinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("maxmin.steps", "must be at least 1"));
        }
        if !(self.step_size0 >= 0.0) || !self.step_size0.is_finite() {
            return Err(Error::config("maxmin.step_size0", "must be finite and nonnegative"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("maxmin.tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Group selected as worst-off (iterate) or the dual argmin group.
    pub group: usize,
    /// `min_u E_π[r_u] − β·KL`, KL subtracted once outside the min.
    pub objective: f64,
    /// `E_π[r_group] − β·KL`: the selected group's own regularized objective.
    pub group_objective: f64,
    pub step_size: f64,
    /// Duality gap (dual solver only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    /// Number of times this step was halved after a non-finite update.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub halvings: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinResult {
    pub policy: Policy,
    pub lambda: Option<Vec<f64>>,
    pub objective: f64,
    pub trace: Vec<TraceStep>,
    /// Certified duality gap (dual solver only).
    pub duality_gap: Option<f64>,
}

#[derive(Serialize)]
struct ResultDoc<'a> {
    objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duality_gap: Option<f64>,
    policy: serde_json::Value,
    trace: &'a [TraceStep],
}

impl MaxMinResult {
    pub fn to_json(&self, world: &FeatureWorld) -> Result<String> {
        let doc = ResultDoc {
            objective: self.objective,
            lambda: self.lambda.as_deref(),
            duality_gap: self.duality_gap,
            policy: serde_json::from_str(&self.policy.to_json(world)?)?,
            trace: &self.trace,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Reward tables `[group][prompt][response]` for every group's true reward.
fn group_rewards(pop: &Population) -> Result<Vec<Vec<Vec<f64>>>> {
    pop.groups()
        .iter()
        .map(|g| reward_table(&g.phi_star, pop.world()))
        .collect()
}

fn check_inputs(pop: &Population, reference: &Policy, beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!("beta must be positive and finite, got {beta}")));
    }
    reference.check_shape(pop.world())?;
    if reference.floor() <= 0.0 {
        return Err(Error::domain("reference policy must be strictly positive"));
    }
    Ok(())
}

/// Per-group expected rewards, the argmin group (lowest id on ties), and `G`.
fn evaluate(pi: &Policy, rewards: &[Vec<Vec<f64>>], reference: &Policy, beta: f64, world: &FeatureWorld) -> Result<(Vec<f64>, usize, f64)> {
    let g: Vec<f64> = rewards.iter().map(|r| expected_reward_table(pi, r, world)).collect();
    let kl = mean_kl(pi, reference, world)?;
    let mut u = 0;
    for (i, &v) in g.iter().enumerate() {
        if v < g[u] {
            u = i;
        }
    }
    let value = g[u] - beta * kl;
    Ok((g, u, value))
}

/// `G(π) = min_u E_π[r_u] − β·KL(π ‖ ref)` and the worst-off group.
pub fn min_group_objective(pi: &Policy, pop: &Population, reference: &Policy, beta: f64) -> Result<(usize, f64)> {
    check_inputs(pop, reference, beta)?;
    pi.check_shape(pop.world())?;
    let (_, u, value) = evaluate(pi, &group_rewards(pop)?, reference, beta, pop.world())?;
    Ok((u, value))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Worst-group mirror ascent. From `π_0 = ref`, each step picks the group with
/// the lowest expected reward and applies
/// `π ← π·exp(α_t·[r_u − β·ln(π/ref)])`, renormalized per prompt, with
/// `α_t = step_size0/√(t+1)`. Returns the best iterate seen.
pub fn maxmin_iterate(pop: &Population, reference: &Policy, beta: f64, config: &MaxMinConfig) -> Result<MaxMinResult> {
    config.validate()?;
    check_inputs(pop, reference, beta)?;
    let world = pop.world();
    let rewards = group_rewards(pop)?;
    let log_ref: Vec<Vec<f64>> = reference.table().iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
    let mut log_pi = log_ref.clone();
    let mut pi = reference.clone();

    let (_, _, g0) = evaluate(&pi, &rewards, reference, beta, world)?;
    let mut best = (g0, pi.clone());
    let mut trace = Vec::with_capacity(config.steps);

    for t in 0..config.steps {
        let (g, u, value) = evaluate(&pi, &rewards, reference, beta, world)?;
        let kl = mean_kl(&pi, reference, world)?;
        let mut alpha = config.step_size0 / ((t + 1) as f64).sqrt();
        let mut halvings = 0u32;
        let next = loop {
            let cand: Vec<Vec<f64>> = log_pi
                .iter()
                .zip(&log_ref)
                .zip(&rewards[u])
                .map(|((lp, lr), r)| {
                    let raw: Vec<f64> = lp
                        .iter()
                        .zip(lr)
                        .zip(r)
                        .map(|((a, b), ri)| a + alpha * (ri - beta * (a - b)))
                        .collect();
                    let z = log_sum_exp(&raw);
                    raw.into_iter().map(|v| v - z).collect()
                })
                .collect();
            if cand.iter().flatten().all(|v| v.is_finite()) {
                break cand;
            }
            alpha *= 0.5;
            halvings += 1;
            if halvings > 200 {
                return Err(Error::NonConvergence {
                    context: "maxmin_iterate: update stays non-finite after halving".into(),
                    iters: t,
                    residual: f64::NAN,
                    last: None,
                });
            }
        };
        trace.push(TraceStep {
            group: u,
            objective: value,
            group_objective: g[u] - beta * kl,
            step_size: alpha,
            gap: None,
            halvings,
        });
        log_pi = next;
        pi = Policy::new(
            log_pi
                .iter()
                .map(|row| {
                    let p: Vec<f64> = row.iter().map(|v| v.exp()).collect();
                    let s: f64 = p.iter().sum();
                    p.into_iter().map(|x| x / s).collect()
                })
                .collect(),
        )?;
        let (_, _, value) = evaluate(&pi, &rewards, reference, beta, world)?;
        if value > best.0 {
            best = (value, pi.clone());
        }
    }
    let (_, _, objective) = evaluate(&best.1, &rewards, reference, beta, world)?;
    Ok(MaxMinResult {
        policy: best.1,
        lambda: None,
        objective,
        trace,
        duality_gap: None,
    })
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// The dual function at λ, its gradient, and the Gibbs policy of the λ-mixed reward.
#[derive(Debug, Clone)]
pub struct DualPoint {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub policy: Policy,
}

fn dual_at(
    lambda: &[f64],
    rewards: &[Vec<Vec<f64>>],
    reference: &Policy,
    beta: f64,
    world: &FeatureWorld,
) -> Result<DualPoint> {
    let mixed: Vec<Vec<f64>> = (0..world.num_prompts())
        .map(|x| {
            (0..world.num_responses(x))
                .map(|y| lambda.iter().zip(rewards).map(|(l, r)| l * r[x][y]).sum())
                .collect()
        })
        .collect();
    let gp = gibbs_from_rewards(&mixed, reference, beta)?;
    let value = gp
        .log_partition
        .iter()
        .enumerate()
        .map(|(x, lz)| world.prompt_weight(x) * beta * lz)
        .sum();
    let gradient = rewards
        .iter()
        .map(|r| expected_reward_table(&gp.policy, r, world))
        .collect();
    Ok(DualPoint {
        value,
        gradient,
        policy: gp.policy,
    })
}

/// `D(λ) = β·E_x ln Σ_y ref(y|x)·exp(Σ_u λ_u r_u(y,x)/β)`.
pub fn dual_value(pop: &Population, reference: &Policy, beta: f64, lambda: &[f64]) -> Result<DualPoint> {
    check_inputs(pop, reference, beta)?;
    if lambda.len() != pop.num_groups() {
        return Err(Error::domain("lambda length differs from the number of groups"));
    }
    dual_at(lambda, &group_rewards(pop)?, reference, beta, pop.world())
}

/// Projected-gradient descent on the dual with backtracking, stopped once the
/// duality gap `D(λ) − G(π_λ)` is within `tol`.
pub fn maxmin_dual(pop: &Population, reference: &Policy, beta: f64, config: &MaxMinConfig) -> Result<MaxMinResult> {
    config.validate()?;
    check_inputs(pop, reference, beta)?;
    let world = pop.world();
    let rewards = group_rewards(pop)?;
    let k = pop.num_groups();
    let mut lambda = vec![1.0 / k as f64; k];
    let mut point = dual_at(&lambda, &rewards, reference, beta, world)?;
    let mut step = 1.0;
    let mut trace = Vec::new();
    let mut gap = f64::INFINITY;

    for _ in 0..config.steps {
        let (g, u, primal) = evaluate(&point.policy, &rewards, reference, beta, world)?;
        let kl = mean_kl(&point.policy, reference, world)?;
        gap = point.value - primal;
        trace.push(TraceStep {
            group: u,
            objective: primal,
            group_objective: g[u] - beta * kl,
            step_size: step,
            gap: Some(gap),
            halvings: 0,
        });
        if gap <= config.tol {
            return Ok(MaxMinResult {
                policy: point.policy,
                lambda: Some(lambda),
                objective: primal,
                trace,
                duality_gap: Some(gap),
            });
        }
        // backtrack until the quadratic upper model holds
        let mut accepted = None;
        for _ in 0..100 {
            let cand = project_simplex(
                &lambda
                    .iter()
                    .zip(&point.gradient)
                    .map(|(l, g)| l - step * g)
                    .collect::<Vec<_>>(),
            );
            let d: Vec<f64> = cand.iter().zip(&lambda).map(|(a, b)| a - b).collect();
            let dd: f64 = d.iter().map(|x| x * x).sum();
            if dd == 0.0 {
                break;
            }
            let next = dual_at(&cand, &rewards, reference, beta, world)?;
            let lin: f64 = point.gradient.iter().zip(&d).map(|(g, x)| g * x).sum();
            if next.value <= point.value + lin + dd / (2.0 * step) + 1e-15 * point.value.abs().max(1.0) {
                accepted = Some((cand, next));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, next)) => {
                lambda = cand;
                point = next;
                step *= 2.0;
            }
            None => break,
        }
    }
    Err(Error::NonConvergence {
        context: "maxmin_dual: duality gap above tolerance".into(),
        iters: trace.len(),
        residual: gap,
        last: Some(lambda),
    })
}

/// Both solvers' outputs, as selected by [`MaxMinConfig::mode`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinRun {
    pub iterate: Option<MaxMinResult>,
    pub dual: Option<MaxMinResult>,
}

pub fn solve_maxmin(pop: &Population, reference: &Policy, beta: f64, config: &MaxMinConfig) -> Result<MaxMinRun> {
    let iterate = match config.mode {
        SolverMode::Iterate | SolverMode::Both => Some(maxmin_iterate(pop, reference, beta, config)?),
        SolverMode::Dual => None,
    };
    let dual = match config.mode {
        SolverMode::Dual | SolverMode::Both => Some(maxmin_dual(pop, reference, beta, config)?),
        SolverMode::Iterate => None,
    };
    Ok(MaxMinRun { iterate, dual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{gibbs_policy, regularized_objective, total_variation};
    use crate::world::RewardParams;

    const HALF_LOGIT: f64 = 0.284_722_598_021_421_3;
    const F_B_RLHF: f64 = 0.322_417_114_075_299_4;

    #[test]
    fn min_group_examples() {
        let pop = Population::two_arm(1);
        let refp = Policy::uniform(pop.world());
        let (u, v) = min_group_objective(&refp, &pop, &refp, 1.0).unwrap();
        assert_eq!(u, 0);
        assert!((v - 0.5).abs() < 1e-15);
        let rlhf = gibbs_policy(&RewardParams(vec![HALF_LOGIT, -HALF_LOGIT]), &refp, 1.0, pop.world()).unwrap();
        let (u, v) = min_group_objective(&rlhf, &pop, &refp, 1.0).unwrap();
        assert_eq!(u, 1);
        assert!((v - F_B_RLHF).abs() < 1e-12);

        let single = Population::from_counts(pop.world().clone(), vec![(RewardParams(vec![0.3, -0.9]), 2)]).unwrap();
        let (_, v) = min_group_objective(&rlhf, &single, &refp, 0.7).unwrap();
        let f = regularized_objective(&rlhf, &single.groups()[0].phi_star, &refp, 0.7, pop.world()).unwrap();
        assert!((v - f.value).abs() < 1e-15);
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.2, 0.2, 0.6]);
        assert!(p.iter().zip([0.2, 0.2, 0.6]).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(project_simplex(&[5.0, 0.0]), vec![1.0, 0.0]);
        let q = project_simplex(&[0.7, 0.7]);
        assert!((q[0] - 0.5).abs() < 1e-15 && (q[1] - 0.5).abs() < 1e-15);
        let r = project_simplex(&[-3.0, 0.4, 0.1]);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-15 && r[0] == 0.0);
    }

    #[test]
    fn two_arm_both_solvers_find_uniform() {
        let pop = Population::two_arm(1);
        let refp = Policy::uniform(pop.world());
        let cfg = MaxMinConfig { steps: 500, ..MaxMinConfig::default() };
        let it = maxmin_iterate(&pop, &refp, 1.0, &cfg).unwrap();
        assert!((it.objective - 0.5).abs() < 1e-3, "{}", it.objective);
        let du = maxmin_dual(&pop, &refp, 1.0, &MaxMinConfig::default()).unwrap();
        let l = du.lambda.as_ref().unwrap();
        assert!((l[0] - 0.5).abs() < 1e-3 && (l[1] - 0.5).abs() < 1e-3);
        assert!(du.duality_gap.unwrap() <= 1e-6);
        assert!((du.objective - 0.5).abs() < 1e-6);
        let (_, g) = min_group_objective(&du.policy, &pop, &refp, 1.0).unwrap();
        assert!((g - du.objective).abs() < 1e-9);
    }

    #[test]
    fn dual_scan_minimum_is_at_half() {
        // independent 1-D scan over λ ∈ [0, 1], step 1e-4
        let pop = Population::two_arm(1);
        let refp = Policy::uniform(pop.world());
        let (mut best_l, mut best_v) = (0.0, f64::INFINITY);
        for i in 0..=10_000 {
            let l = i as f64 * 1e-4;
            let v = 0.5f64.ln() + ((l).exp() + (1.0 - l).exp()).ln();
            if v < best_v {
                best_v = v;
                best_l = l;
            }
        }
        assert!((best_l - 0.5).abs() < 1e-4);
        let d = dual_value(&pop, &refp, 1.0, &[0.5, 0.5]).unwrap();
        assert!((d.value - best_v).abs() < 1e-12);
    }

    #[test]
    fn single_group_reduces_to_gibbs() {
        let pop = Population::from_counts(
            crate::world::FeatureWorld::uniform(
                2,
                vec![(
                    "x".into(),
                    vec![("a".into(), vec![1.0, 0.2]), ("b".into(), vec![-0.3, 0.8]), ("c".into(), vec![0.1, -0.5])],
                )],
            )
            .unwrap(),
            vec![(RewardParams(vec![1.2, -0.4]), 3)],
        )
        .unwrap();
        let refp = Policy::uniform(pop.world());
        let target = gibbs_policy(&pop.groups()[0].phi_star, &refp, 0.5, pop.world()).unwrap();
        let du = maxmin_dual(&pop, &refp, 0.5, &MaxMinConfig::default()).unwrap();
        assert_eq!(du.lambda.unwrap(), vec![1.0]);
        assert!(total_variation(&du.policy, &target) < 1e-12);
        let it = maxmin_iterate(&pop, &refp, 0.5, &MaxMinConfig { steps: 3000, ..MaxMinConfig::default() }).unwrap();
        assert!(total_variation(&it.policy, &target) < 1e-4);
    }

    #[test]
    fn zero_step_stays_at_reference() {
        let pop = Population::two_arm(1);
        let refp = Policy::new(vec![vec![0.3, 0.7]]).unwrap();
        let cfg = MaxMinConfig { steps: 10, step_size0: 0.0, ..MaxMinConfig::default() };
        let it = maxmin_iterate(&pop, &refp, 1.0, &cfg).unwrap();
        assert_eq!(it.policy, refp);
        let (_, g) = min_group_objective(&refp, &pop, &refp, 1.0).unwrap();
        assert_eq!(it.objective, g);
    }

    #[test]
    fn identical_groups_any_lambda() {
        let phi = RewardParams(vec![0.4, -1.0]);
        let pop = Population::from_counts(crate::world::FeatureWorld::two_arm(), vec![(phi.clone(), 1), (phi.clone(), 3)]).unwrap();
        let refp = Policy::uniform(pop.world());
        let du = maxmin_dual(&pop, &refp, 1.0, &MaxMinConfig::default()).unwrap();
        let target = gibbs_policy(&phi, &refp, 1.0, pop.world()).unwrap();
        assert!(total_variation(&du.policy, &target) < 1e-12);
    }

    #[test]
    fn trace_serializes() {
        let pop = Population::two_arm(1);
        let refp = Policy::uniform(pop.world());
        let r = maxmin_iterate(&pop, &refp, 1.0, &MaxMinConfig { steps: 5, ..MaxMinConfig::default() }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json(pop.world()).unwrap()).unwrap();
        assert_eq!(v["trace"].as_array().unwrap().len(), 5);
        assert!(v["policy"]["x0"]["y0"].is_number());
    }
}
