//! Numerical checks of the diversity lower bounds and related identities.
//!
//! All bound checks use population-exact quantities: φ* comes from the exact
//! cross-entropy projection onto the BT family, not from samples.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maxmin::{maxmin_dual, MaxMinConfig};
use crate::policy::{align_gap, gibbs_policy, Policy};
use crate::reward::{
    fit_population_reward_extrapolated, fit_single_reward, population_ce, prediction_accuracy, FitConfig,
};
use crate::rng::substream;
use crate::synthpop::{group_pref_prob, sample_dataset_in_stream, Population, PreferenceRecord};
use crate::world::{enumerate_comparisons, pref_prob, triple_weights, ComparisonTriple, FeatureWorld, RewardParams};

/// Prompt-weighted mean of `|p_i*(z) − p_j*(z)|` over all comparisons.
pub fn diversity(pop: &Population, i: usize, j: usize) -> Result<f64> {
    pop.group(i)?;
    pop.group(j)?;
    if i == j {
        return Ok(0.0);
    }
    let zs = enumerate_comparisons(pop.world());
    let ws = triple_weights(pop.world(), &zs)?;
    let mut d = 0.0;
    for (z, w) in zs.iter().zip(ws) {
        d += w * (group_pref_prob(pop, i, z)? - group_pref_prob(pop, j, z)?).abs();
    }
    Ok(d)
}

pub fn diversity_matrix(pop: &Population) -> Result<Vec<Vec<f64>>> {
    let k = pop.num_groups();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = diversity(pop, i, j)?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinorityGap {
    pub u_star: usize,
    pub j_star: usize,
    pub epsilon: f64,
}

/// Picks the most diverse pair, takes as `u*` the member farther from the
/// remaining groups (ties: smaller η, then lower id), and returns
/// `ε = Diversity(u*, j*) − max_{k≠u*} Diversity(k, j*)`. ε may be ≤ 0.
pub fn minority_epsilon(pop: &Population) -> Result<MinorityGap> {
    let k = pop.num_groups();
    if k < 2 {
        return Err(Error::domain("minority gap needs at least two groups"));
    }
    let div = diversity_matrix(pop)?;
    let (mut a, mut b) = (0, 1);
    for i in 0..k {
        for j in i + 1..k {
            if div[i][j] > div[a][b] {
                a = i;
                b = j;
            }
        }
    }
    let reach = |c: usize| {
        (0..k)
            .filter(|&m| m != a && m != b)
            .map(|m| div[c][m])
            .fold(0.0, f64::max)
    };
    let (ra, rb) = (reach(a), reach(b));
    let a_wins = if ra != rb {
        ra > rb
    } else if pop.eta(a) != pop.eta(b) {
        pop.eta(a) < pop.eta(b)
    } else {
        true
    };
    let (u_star, j_star) = if a_wins { (a, b) } else { (b, a) };
    let runner_up = (0..k)
        .filter(|&m| m != u_star)
        .map(|m| div[m][j_star])
        .fold(0.0, f64::max);
    Ok(MinorityGap {
        u_star,
        j_star,
        epsilon: div[u_star][j_star] - runner_up,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Applicable,
    /// ε ≤ 0 or fewer than two groups.
    NotApplicable,
    /// Rank-deficient feature matrix (λ_ψ = 0).
    Degenerate,
}

/// Intermediate quantities behind a bound check.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Witnesses {
    pub u_star: Option<usize>,
    pub j_star: Option<usize>,
    pub epsilon: Option<f64>,
    pub eta_u: Option<f64>,
    pub feature_bound: f64,
    pub mismatch_norm: Option<f64>,
    pub phi_star: Option<RewardParams>,
    /// Largest distance between the extrapolated φ* and the fits along the ridge path.
    pub ridge_spread: Option<f64>,
    /// Whether the verdict is the same at every ridge on the path.
    pub ridge_stable: Option<bool>,
    pub lambda_psi: Option<f64>,
    pub policy_floor: Option<f64>,
    pub l_pi: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub status: BoundStatus,
    pub lhs: f64,
    pub rhs_stated: f64,
    pub rhs_proof: f64,
    pub witnesses: Witnesses,
}

impl BoundReport {
    fn inapplicable(status: BoundStatus, witnesses: Witnesses) -> Self {
        Self {
            status,
            lhs: f64::NAN,
            rhs_stated: f64::NAN,
            rhs_proof: f64::NAN,
            witnesses,
        }
    }

    pub fn holds_stated(&self) -> bool {
        self.status == BoundStatus::Applicable && self.lhs >= self.rhs_stated
    }

    pub fn holds_proof(&self) -> bool {
        self.status == BoundStatus::Applicable && self.lhs >= self.rhs_proof
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let num = |v: f64| if v.is_finite() { serde_json::json!(v) } else { serde_json::Value::Null };
        serde_json::json!({
            "status": self.status,
            "lhs": num(self.lhs),
            "rhs_stated": num(self.rhs_stated),
            "rhs_proof": num(self.rhs_proof),
            "holds_stated": self.holds_stated(),
            "holds_proof": self.holds_proof(),
            "witnesses": self.witnesses,
        })
    }
}

/// Reward-mismatch check: `‖φ* − φ_{u*}*‖ ≥ ε(1 − η(u*))/(4D)`.
pub fn verify_lemma1(pop: &Population, fit_config: &FitConfig) -> Result<BoundReport> {
    let mut w = Witnesses {
        feature_bound: pop.world().feature_bound(),
        ..Witnesses::default()
    };
    if pop.num_groups() < 2 {
        return Ok(BoundReport::inapplicable(BoundStatus::NotApplicable, w));
    }
    let gap = minority_epsilon(pop)?;
    w.u_star = Some(gap.u_star);
    w.j_star = Some(gap.j_star);
    w.epsilon = Some(gap.epsilon);
    w.eta_u = Some(pop.eta(gap.u_star));
    if gap.epsilon <= 0.0 {
        return Ok(BoundReport::inapplicable(BoundStatus::NotApplicable, w));
    }
    let zs = enumerate_comparisons(pop.world());
    let path = fit_population_reward_extrapolated(pop, &zs, fit_config)?;
    let target = &pop.group(gap.u_star)?.phi_star;
    let lhs = path.phi.distance(target);
    let rhs = gap.epsilon * (1.0 - pop.eta(gap.u_star)) / (4.0 * pop.world().feature_bound());
    w.mismatch_norm = Some(lhs);
    w.ridge_spread = Some(path.spread);
    w.ridge_stable = Some(path.fits.iter().all(|(_, p)| (p.distance(target) >= rhs) == (lhs >= rhs)));
    w.phi_star = Some(path.phi);
    Ok(BoundReport {
        status: BoundStatus::Applicable,
        lhs,
        rhs_stated: rhs,
        rhs_proof: rhs,
        witnesses: w,
    })
}

/// Smallest eigenvalue of `ΨᵀΨ`, Ψ stacking every `(prompt, response)` feature vector.
pub fn feature_min_eigenvalue(world: &FeatureWorld) -> f64 {
    let d = world.dim();
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for p in world.prompts() {
        for r in &p.responses {
            for i in 0..d {
                for j in 0..d {
                    gram[(i, j)] += r.features[i] * r.features[j];
                }
            }
        }
    }
    gram.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Alignment-gap check at the uniform reference policy.
pub fn verify_theorem1(pop: &Population, beta: f64, fit_config: &FitConfig) -> Result<BoundReport> {
    verify_theorem1_with_reference(pop, &Policy::uniform(pop.world()), beta, fit_config)
}

/// `Align-Gap(π_RLHF, u*)` against both the printed right-hand side
/// `λ_ψ·ε·(1−η)/(64·L_π·β²·D²)` and the squared form
/// `λ_ψ·ε²·(1−η)²/(64·L_π·β²·D²)`, with `L_π = 1/c` and `c` the smallest
/// entry among every group's optimal policy and `π_RLHF`.
pub fn verify_theorem1_with_reference(
    pop: &Population,
    reference: &Policy,
    beta: f64,
    fit_config: &FitConfig,
) -> Result<BoundReport> {
    if !(beta > 0.0) {
        return Err(Error::domain(format!("beta must be positive, got {beta}")));
    }
    let lemma = verify_lemma1(pop, fit_config)?;
    let mut w = lemma.witnesses;
    w.beta = Some(beta);
    if lemma.status != BoundStatus::Applicable {
        return Ok(BoundReport::inapplicable(lemma.status, w));
    }
    let world = pop.world();
    let lambda_psi = feature_min_eigenvalue(world);
    w.lambda_psi = Some(lambda_psi);
    let gram_scale = world
        .prompts()
        .iter()
        .flat_map(|p| p.responses.iter())
        .map(|r| r.features.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>();
    if lambda_psi <= 1e-12 * gram_scale.max(1.0) {
        return Ok(BoundReport::inapplicable(BoundStatus::Degenerate, w));
    }
    let phi_star = w.phi_star.clone().expect("applicable lemma report carries φ*");
    let u = w.u_star.expect("applicable lemma report carries u*");
    let eps = w.epsilon.expect("applicable lemma report carries ε");
    let rlhf = gibbs_policy(&phi_star, reference, beta, world)?;
    let lhs = align_gap(&rlhf, u, pop, reference, beta)?;
    let mut floor = rlhf.floor();
    for g in pop.groups() {
        floor = floor.min(gibbs_policy(&g.phi_star, reference, beta, world)?.floor());
    }
    let l_pi = 1.0 / floor;
    let d = world.feature_bound();
    let one_minus_eta = 1.0 - pop.eta(u);
    let denom = 64.0 * l_pi * beta * beta * d * d;
    w.policy_floor = Some(floor);
    w.l_pi = Some(l_pi);
    Ok(BoundReport {
        status: BoundStatus::Applicable,
        lhs,
        rhs_stated: lambda_psi * eps * one_minus_eta / denom,
        rhs_proof: lambda_psi * eps * eps * one_minus_eta * one_minus_eta / denom,
        witnesses: w,
    })
}

/// `|p_φ(z) − p_φ′(z)| / ‖φ − φ′‖`, or `None` when `φ = φ′`.
pub fn lipschitz_ratio(
    world: &FeatureWorld,
    phi: &RewardParams,
    phi2: &RewardParams,
    z: &ComparisonTriple,
) -> Result<Option<f64>> {
    let dist = phi.distance(phi2);
    if dist == 0.0 {
        return Ok(None);
    }
    Ok(Some((pref_prob(phi, world, z)? - pref_prob(phi2, world, z)?).abs() / dist))
}

/// Largest observed Lipschitz ratio of `φ ↦ p_φ(z)` over random
/// `(φ, φ′, z)` with parameter components uniform in `[−3, 3]`.
pub fn lipschitz_check(world: &FeatureWorld, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::domain("trials must be at least 1"));
    }
    let zs = enumerate_comparisons(world);
    let mut rng = substream(seed, "lipschitz", 0);
    let d = world.dim();
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let a = RewardParams((0..d).map(|_| rng.gen_range(-3.0..=3.0)).collect());
        let b = RewardParams((0..d).map(|_| rng.gen_range(-3.0..=3.0)).collect());
        let z = zs[rng.gen_range(0..zs.len())];
        if let Some(r) = lipschitz_ratio(world, &a, &b, &z)? {
            best = best.max(r);
        }
    }
    Ok(best)
}

fn binary_entropy(p: f64) -> f64 {
    let t = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    t(p) + t(1.0 - p)
}

fn binary_kl(p: f64, q: f64) -> f64 {
    let t = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    t(p, q) + t(1.0 - p, 1.0 - q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    /// Cross-entropy against the mixture.
    pub direct: f64,
    /// `Σ_u η(u)·[KL(p_u* ‖ p_φ) + H(p_u*)]`, averaged over the carrier.
    pub decomposed: f64,
    /// Largest `|q_z − Σ_u η(u) p_u*(z)|`, where `q_z` is the root of the
    /// per-comparison derivative of the group-weighted cross-entropy.
    pub minimizer_error: f64,
}

/// Root in `(0, 1)` of `Σ_u η_u·(−p_u/q + (1 − p_u)/(1 − q))`, by bisection.
fn per_z_minimizer(etas: &[f64], probs: &[f64]) -> f64 {
    let deriv = |q: f64| {
        etas.iter()
            .zip(probs)
            .map(|(e, p)| e * (-p / q + (1.0 - p) / (1.0 - q)))
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    if deriv(lo) >= 0.0 {
        return 0.0;
    }
    if deriv(hi) <= 0.0 {
        return 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Compares the mixture cross-entropy with its per-group KL + entropy
/// decomposition and checks the per-comparison minimizer is the mixture.
pub fn loss_decomposition_check(
    pop: &Population,
    phi: &RewardParams,
    triples: &[ComparisonTriple],
) -> Result<DecompositionCheck> {
    let world = pop.world();
    let direct = population_ce(phi, pop, triples)?;
    let ws = triple_weights(world, triples)?;
    let etas: Vec<f64> = pop.groups().iter().map(|g| g.eta).collect();
    let mut decomposed = 0.0;
    let mut minimizer_error: f64 = 0.0;
    for (z, w) in triples.iter().zip(ws) {
        let q = pref_prob(phi, world, z)?;
        let probs: Vec<f64> = (0..pop.num_groups())
            .map(|u| group_pref_prob(pop, u, z))
            .collect::<Result<_>>()?;
        let mut inner = 0.0;
        for (e, p) in etas.iter().zip(&probs) {
            inner += e * (binary_kl(*p, q) + binary_entropy(*p));
        }
        decomposed += w * inner;
        let mixture: f64 = etas.iter().zip(&probs).map(|(e, p)| e * p).sum();
        minimizer_error = minimizer_error.max((per_z_minimizer(&etas, &probs) - mixture).abs());
    }
    Ok(DecompositionCheck {
        direct,
        decomposed,
        minimizer_error,
    })
}

/// Settings for the majority/minority ratio sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub ratios: Vec<usize>,
    pub annotators_base: usize,
    pub comparisons: usize,
    pub seeds: Vec<u64>,
    pub fit: FitConfig,
    pub beta: f64,
    pub maxmin: MaxMinConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![1, 2, 6, 10],
            annotators_base: 10,
            comparisons: 50,
            seeds: (0..10).collect(),
            fit: FitConfig::default(),
            beta: 1.0,
            maxmin: MaxMinConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: usize,
    pub seed: u64,
    pub acc_total: f64,
    pub acc_majority: f64,
    pub acc_minority: f64,
    pub util_min_single: f64,
    pub util_min_maxmin: f64,
}

/// Per-ratio means over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub ratio: usize,
    pub acc_total: f64,
    pub acc_majority: f64,
    pub acc_minority: f64,
    pub util_min_single: f64,
    pub util_min_maxmin: f64,
}

fn min_group_utility(pop: &Population, pi: &Policy, reference: &Policy, beta: f64) -> Result<f64> {
    Ok(crate::maxmin::min_group_objective(pi, pop, reference, beta)?.1)
}

/// Single-reward accuracy as the majority:minority annotator ratio grows.
///
/// `group_params` is `[majority, minority]`. For each ratio `r` the training
/// population has `r·annotators_base` majority and `annotators_base`
/// minority annotators. Each seed's held-out test set has `annotators_base`
/// annotators per group and is shared by every ratio.
pub fn minority_sweep(
    world: &FeatureWorld,
    group_params: &[RewardParams; 2],
    config: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if config.ratios.contains(&0) {
        return Err(Error::config("sweep.ratios", "ratios must be positive integers"));
    }
    if config.annotators_base == 0 {
        return Err(Error::config("sweep.annotators_base", "must be at least 1"));
    }
    let reference = Policy::uniform(world);
    let test_pop = Population::from_counts(
        world.clone(),
        vec![
            (group_params[0].clone(), config.annotators_base),
            (group_params[1].clone(), config.annotators_base),
        ],
    )?;
    let maxmin = maxmin_dual(&test_pop, &reference, config.beta, &config.maxmin)?;
    let util_maxmin = min_group_utility(&test_pop, &maxmin.policy, &reference, config.beta)?;

    let mut rows = Vec::new();
    for &ratio in &config.ratios {
        let pop = Population::from_counts(
            world.clone(),
            vec![
                (group_params[0].clone(), ratio * config.annotators_base),
                (group_params[1].clone(), config.annotators_base),
            ],
        )?;
        for &seed in &config.seeds {
            let train = sample_dataset_in_stream(&pop, config.comparisons, seed, &format!("sweep-train-{ratio}"))?;
            let test = sample_dataset_in_stream(&test_pop, config.comparisons, seed, "sweep-test")?;
            let phi = fit_single_reward(train.records(), world, &config.fit)?;
            let by_group = |g: usize| -> Vec<PreferenceRecord> {
                test.records()
                    .iter()
                    .filter(|r| test.hidden_labels().get(r.annotator_id) == Some(g))
                    .copied()
                    .collect()
            };
            let rlhf = gibbs_policy(&phi, &reference, config.beta, world)?;
            rows.push(SweepRow {
                ratio,
                seed,
                acc_total: prediction_accuracy(&phi, test.records(), world)?,
                acc_majority: prediction_accuracy(&phi, &by_group(0), world)?,
                acc_minority: prediction_accuracy(&phi, &by_group(1), world)?,
                util_min_single: min_group_utility(&test_pop, &rlhf, &reference, config.beta)?,
                util_min_maxmin: util_maxmin,
            });
        }
    }
    Ok(rows)
}

pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut ratios: Vec<usize> = rows.iter().map(|r| r.ratio).collect();
    ratios.dedup();
    ratios
        .into_iter()
        .map(|ratio| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.ratio == ratio).collect();
            let n = sel.len() as f64;
            let mean = |f: fn(&SweepRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            SweepSummary {
                ratio,
                acc_total: mean(|r| r.acc_total),
                acc_majority: mean(|r| r.acc_majority),
                acc_minority: mean(|r| r.acc_minority),
                util_min_single: mean(|r| r.util_min_single),
                util_min_maxmin: mean(|r| r.util_min_maxmin),
            }
        })
        .collect()
}

/// CSV with columns `ratio, seed, acc_total, acc_majority, acc_minority,
/// util_min_single, util_min_maxmin`.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// The default sweep instance: three prompts with four responses each in two
/// feature dimensions; the majority rewards the first feature, the minority
/// the second.
pub fn sweep_instance() -> (FeatureWorld, [RewardParams; 2]) {
    let resp = |v: &[(f64, f64)]| -> Vec<(String, Vec<f64>)> {
        v.iter()
            .enumerate()
            .map(|(i, &(a, b))| (format!("y{i}"), vec![a, b]))
            .collect()
    };
    let world = FeatureWorld::uniform(
        2,
        vec![
            ("x0".into(), resp(&[(1.0, 0.0), (0.0, 1.0), (0.6, 0.5), (0.2, 0.2)])),
            ("x1".into(), resp(&[(0.9, 0.1), (0.1, 0.9), (0.5, 0.5), (0.8, 0.7)])),
            ("x2".into(), resp(&[(0.7, 0.0), (0.0, 0.7), (1.0, 0.3), (0.3, 1.0)])),
        ],
    )
    .expect("sweep world is valid");
    (world, [RewardParams(vec![2.0, 0.0]), RewardParams(vec![0.0, 2.0])])
}

/// Shape limits for randomized verification instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomInstanceSpec {
    pub max_dim: usize,
    pub max_groups: usize,
    pub max_prompts: usize,
    pub max_responses: usize,
    /// Reward parameter components are uniform in `[−phi_scale, phi_scale]`.
    pub phi_scale: f64,
}

impl Default for RandomInstanceSpec {
    fn default() -> Self {
        Self {
            max_dim: 4,
            max_groups: 3,
            max_prompts: 3,
            max_responses: 4,
            phi_scale: 2.0,
        }
    }
}

/// A random population: dimension in `[2, max_dim]`, groups in
/// `[2, max_groups]`, features uniform in `[−1, 1]`, etas uniform then
/// normalized.
pub fn random_population(spec: &RandomInstanceSpec, seed: u64, index: u64) -> Result<Population> {
    let mut rng = substream(seed, "random-instance", index);
    let dim = rng.gen_range(2..=spec.max_dim.max(2));
    let k = rng.gen_range(2..=spec.max_groups.max(2));
    let prompts = rng.gen_range(1..=spec.max_prompts.max(1));
    let world = FeatureWorld::uniform(
        dim,
        (0..prompts)
            .map(|x| {
                let n = rng.gen_range(2..=spec.max_responses.max(2));
                (
                    format!("x{x}"),
                    (0..n)
                        .map(|y| (format!("y{y}"), (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                        .collect(),
                )
            })
            .collect(),
    )?;
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut etas: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let head: f64 = etas[..k - 1].iter().sum();
    etas[k - 1] = 1.0 - head;
    let groups = (0..k)
        .map(|u| crate::synthpop::GroupSpec {
            group_id: u,
            phi_star: RewardParams((0..dim).map(|_| rng.gen_range(-spec.phi_scale..spec.phi_scale)).collect()),
            eta: etas[u],
            annotator_count: 1,
        })
        .collect();
    Population::new(world, groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    // mpmath references for the two-arm instance
    const DIV_TWO_ARM: f64 = 0.462_117_157_260_009_8;
    const MISMATCH_B: f64 = 1.315_894_795_069_491_3;
    const LEMMA_RHS: f64 = 0.092_423_431_452_001_95;
    const GAP_B: f64 = 0.297_697_392_882_978_1;
    const RHS_STATED: f64 = 0.001_553_530_563_912_107;
    const RHS_PROOF: f64 = 0.000_574_330_502_329_282_3;
    const L_PI: f64 = 3.718_281_828_459_045;

    fn three_group(outlier: RewardParams) -> Population {
        Population::from_counts(
            FeatureWorld::uniform(
                2,
                vec![(
                    "x".into(),
                    vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![0.0, 1.0]), ("c".into(), vec![0.5, 0.5])],
                )],
            )
            .unwrap(),
            vec![(RewardParams(vec![1.0, 0.0]), 5), (RewardParams(vec![0.9, 0.1]), 4), (outlier, 1)],
        )
        .unwrap()
    }

    #[test]
    fn diversity_examples() {
        let pop = Population::two_arm(1);
        assert_eq!(diversity(&pop, 1, 1).unwrap(), 0.0);
        assert!((diversity(&pop, 0, 1).unwrap() - DIV_TWO_ARM).abs() < 1e-15);
        // φ difference (1, 1) is orthogonal to the only feature difference (1, −1)
        let same = Population::from_counts(
            FeatureWorld::two_arm(),
            vec![(RewardParams(vec![0.5, 0.0]), 1), (RewardParams(vec![1.5, 1.0]), 1)],
        )
        .unwrap();
        assert!(diversity(&same, 0, 1).unwrap().abs() < 1e-15);
    }

    #[test]
    fn diversity_is_a_pseudometric() {
        for i in 0..20 {
            let pop = random_population(&RandomInstanceSpec::default(), 77, i).unwrap();
            let m = diversity_matrix(&pop).unwrap();
            let k = pop.num_groups();
            for a in 0..k {
                assert_eq!(m[a][a], 0.0);
                for b in 0..k {
                    assert_eq!(m[a][b], m[b][a]);
                    assert!(m[a][b] >= 0.0);
                    for c in 0..k {
                        assert!(m[a][c] <= m[a][b] + m[b][c] + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn minority_epsilon_examples() {
        let g = minority_epsilon(&Population::two_arm(1)).unwrap();
        assert_eq!((g.u_star, g.j_star), (1, 0));
        assert!((g.epsilon - DIV_TWO_ARM).abs() < 1e-15);

        let outlier = three_group(RewardParams(vec![-2.0, 2.0]));
        let g = minority_epsilon(&outlier).unwrap();
        assert_eq!(g.u_star, 2);
        // brute force over every (u, j) pair: ε(u, j) = div(u, j) − max_{k≠u} div(k, j)
        let m = diversity_matrix(&outlier).unwrap();
        let brute = (0..3)
            .flat_map(|u| (0..3).filter(move |&j| j != u).map(move |j| (u, j)))
            .map(|(u, j)| (m[u][j] - (0..3).filter(|&k| k != u).map(|k| m[k][j]).fold(0.0, f64::max), u))
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
        assert_eq!(brute.1, 2);
        assert!(g.epsilon > 0.0);
        assert!((g.epsilon - brute.0).abs() < 1e-15);

        let single = Population::from_counts(FeatureWorld::two_arm(), vec![(RewardParams(vec![1.0, 0.0]), 1)]).unwrap();
        assert!(minority_epsilon(&single).is_err());
    }

    #[test]
    fn equidistant_groups_have_zero_epsilon() {
        // three responses on a line; rewards chosen so every pair of groups
        // differs on exactly one comparison by the same amount
        let w = FeatureWorld::uniform(
            3,
            vec![
                ("x0".into(), vec![("a".into(), vec![1.0, 0.0, 0.0]), ("b".into(), vec![0.0, 0.0, 0.0])]),
                ("x1".into(), vec![("a".into(), vec![0.0, 1.0, 0.0]), ("b".into(), vec![0.0, 0.0, 0.0])]),
                ("x2".into(), vec![("a".into(), vec![0.0, 0.0, 1.0]), ("b".into(), vec![0.0, 0.0, 0.0])]),
            ],
        )
        .unwrap();
        let pop = Population::from_counts(
            w,
            vec![
                (RewardParams(vec![1.0, 0.0, 0.0]), 1),
                (RewardParams(vec![0.0, 1.0, 0.0]), 1),
                (RewardParams(vec![0.0, 0.0, 1.0]), 1),
            ],
        )
        .unwrap();
        let g = minority_epsilon(&pop).unwrap();
        assert!(g.epsilon.abs() < 1e-15);
        assert_eq!(verify_lemma1(&pop, &FitConfig::default()).unwrap().status, BoundStatus::NotApplicable);
    }

    #[test]
    fn lemma1_two_arm() {
        let r = verify_lemma1(&Population::two_arm(1), &FitConfig::default()).unwrap();
        assert_eq!(r.status, BoundStatus::Applicable);
        assert!((r.lhs - MISMATCH_B).abs() < 1e-7, "{}", r.lhs);
        assert!((r.rhs_stated - LEMMA_RHS).abs() < 1e-15);
        assert_eq!(r.rhs_proof, r.rhs_stated);
        assert!(r.holds_stated() && r.holds_proof());
        assert_eq!(r.witnesses.ridge_stable, Some(true));
        let single = Population::from_counts(FeatureWorld::two_arm(), vec![(RewardParams(vec![1.0, 0.0]), 1)]).unwrap();
        let r = verify_lemma1(&single, &FitConfig::default()).unwrap();
        assert_eq!(r.status, BoundStatus::NotApplicable);
        assert!(!r.holds_stated());
    }

    #[test]
    fn theorem1_two_arm() {
        let r = verify_theorem1(&Population::two_arm(1), 1.0, &FitConfig::default()).unwrap();
        assert!((r.lhs - GAP_B).abs() < 1e-7);
        assert!((r.witnesses.lambda_psi.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.witnesses.l_pi.unwrap() - L_PI).abs() < 1e-12);
        assert!((r.rhs_stated - RHS_STATED).abs() < 1e-12);
        assert!((r.rhs_proof - RHS_PROOF).abs() < 1e-12);
        assert!(r.holds_stated() && r.holds_proof());

        let r10 = verify_theorem1(&Population::two_arm(1), 10.0, &FitConfig::default()).unwrap();
        assert!(r10.lhs < r.lhs);
        // rhs · β² · L_π is β-independent
        let scaled = |b: &BoundReport, beta: f64| b.rhs_stated * beta * beta * b.witnesses.l_pi.unwrap();
        assert!((scaled(&r10, 10.0) - scaled(&r, 1.0)).abs() < 1e-12);
        assert!(r10.rhs_stated < r.rhs_stated / 10.0);
        assert!(r10.holds_stated() && r10.holds_proof());
    }

    #[test]
    fn theorem1_degenerate_features() {
        // every feature vector lies on one line, so ΨᵀΨ is singular
        let w = FeatureWorld::uniform(
            2,
            vec![("x".into(), vec![("a".into(), vec![1.0, 1.0]), ("b".into(), vec![-1.0, -1.0]), ("c".into(), vec![0.5, 0.5])])],
        )
        .unwrap();
        let pop = Population::from_counts(w, vec![(RewardParams(vec![1.0, 0.0]), 4), (RewardParams(vec![-1.0, 0.0]), 1)]).unwrap();
        let r = verify_theorem1(&pop, 1.0, &FitConfig::default()).unwrap();
        assert_eq!(r.status, BoundStatus::Degenerate);
    }

    #[test]
    fn lipschitz_examples() {
        let w = FeatureWorld::two_arm();
        let z = enumerate_comparisons(&w)[0];
        let p = RewardParams(vec![0.3, 0.1]);
        assert_eq!(lipschitz_ratio(&w, &p, &p, &z).unwrap(), None);
        let worst = lipschitz_check(&w, 10_000, 1).unwrap();
        assert!(worst <= 4.0 * w.feature_bound());

        // 1-D world with ψ′ = 2D: the slope at the logistic midpoint is ψ′/4 = D/2
        let d = 1.5;
        let line = FeatureWorld::uniform(1, vec![("x".into(), vec![("a".into(), vec![d]), ("b".into(), vec![-d])])]).unwrap();
        let z = enumerate_comparisons(&line)[0];
        let r = lipschitz_ratio(&line, &RewardParams(vec![1e-7]), &RewardParams(vec![-1e-7]), &z)
            .unwrap()
            .unwrap();
        assert!((r - d / 2.0).abs() < 1e-9);
    }

    #[test]
    fn decomposition_examples() {
        let pop = Population::two_arm(1);
        let zs = enumerate_comparisons(pop.world());
        let c = loss_decomposition_check(&pop, &RewardParams::zeros(2), &zs).unwrap();
        assert!((c.direct - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((c.direct - c.decomposed).abs() < 1e-12);
        assert!(c.minimizer_error < 1e-9);

        let single = Population::from_counts(pop.world().clone(), vec![(RewardParams(vec![0.4, -0.3]), 1)]).unwrap();
        let c = loss_decomposition_check(&single, &RewardParams(vec![0.4, -0.3]), &zs).unwrap();
        let p = crate::world::sigmoid(0.7);
        assert!((c.direct - binary_entropy(p)).abs() < 1e-12);
        assert!((c.decomposed - binary_entropy(p)).abs() < 1e-12);
    }

    #[test]
    fn sweep_rows_are_well_formed() {
        let (world, params) = sweep_instance();
        let cfg = SweepConfig {
            ratios: vec![1, 3],
            seeds: vec![0, 1],
            annotators_base: 4,
            comparisons: 20,
            ..SweepConfig::default()
        };
        let rows = minority_sweep(&world, &params, &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            let lo = r.acc_majority.min(r.acc_minority) - 1e-12;
            let hi = r.acc_majority.max(r.acc_minority) + 1e-12;
            // balanced test set, so the total is the plain average of both groups
            assert!(r.acc_total >= lo && r.acc_total <= hi);
            assert!(r.util_min_maxmin >= r.util_min_single - 1e-9);
        }
        assert_eq!(rows, minority_sweep(&world, &params, &cfg).unwrap());
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("ratio,seed,acc_total,acc_majority,acc_minority,util_min_single,util_min_maxmin\n"));
    }

    #[test]
    fn symmetric_one_to_one_sweep_is_balanced() {
        let (world, params) = sweep_instance();
        let cfg = SweepConfig { ratios: vec![1], ..SweepConfig::default() };
        let s = summarize_sweep(&minority_sweep(&world, &params, &cfg).unwrap());
        assert!((s[0].acc_majority - s[0].acc_minority).abs() < 0.05, "{s:?}");
    }

    #[test]
    fn reports_are_reproducible() {
        let spec = RandomInstanceSpec::default();
        let pop = random_population(&spec, 5, 3).unwrap();
        let a = verify_theorem1(&pop, 1.0, &FitConfig::default()).unwrap();
        let b = verify_theorem1(&pop, 1.0, &FitConfig::default()).unwrap();
        assert_eq!(a.to_json_value().to_string(), b.to_json_value().to_string());
    }
}
