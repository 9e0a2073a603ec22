//! Reward fitting: single-reward MLE, the population-exact KL projection, and
//! hard-EM reward mixtures.
//!
//! Both single-reward fits reduce to one ridge-regularized logistic problem
//! over feature differences with (possibly soft) targets, solved by damped
//! Newton iterations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::synthpop::{mixture_pref_prob, HiddenLabels, Population, PreferenceRecord, Winner};
use crate::world::{log_sigmoid, sigmoid, softplus, triple_weights, ComparisonTriple, FeatureWorld, RewardParams};

/// Ridge values used when extrapolating a fit to zero regularization.
pub const RIDGE_PATH: [f64; 3] = [1e-4, 1e-6, 1e-8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitInit {
    Zero,
    Given(RewardParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub ridge: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub init: FitInit,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            grad_tol: 1e-10,
            max_iters: 100,
            init: FitInit::Zero,
        }
    }
}

impl FitConfig {
    pub fn with_ridge(&self, ridge: f64) -> Self {
        Self {
            ridge,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::config("fit.ridge", "must be a finite nonnegative number"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::config("fit.grad_tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("fit.max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// `min_φ Σ_i w_i·[t_i·softplus(−⟨φ,Δ_i⟩) + (1 − t_i)·softplus(⟨φ,Δ_i⟩)] + ridge/2·‖φ‖²`
#[derive(Debug, Clone)]
pub(crate) struct LogisticProblem {
    diffs: Vec<Vec<f64>>,
    weights: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl LogisticProblem {
    fn new(dim: usize) -> Self {
        Self {
            diffs: Vec::new(),
            weights: Vec::new(),
            targets: Vec::new(),
            dim,
        }
    }

    fn push(&mut self, diff: Vec<f64>, weight: f64, target: f64) {
        self.diffs.push(diff);
        self.weights.push(weight);
        self.targets.push(target);
    }

    /// Mean-loss problem from hard-labelled records, aggregated by triple.
    pub(crate) fn from_records(records: &[PreferenceRecord], world: &FeatureWorld) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::domain("no records to fit"));
        }
        let mut counts: BTreeMap<ComparisonTriple, (f64, f64)> = BTreeMap::new();
        for r in records {
            let e = counts.entry(r.triple).or_default();
            match r.winner {
                Winner::First => e.0 += 1.0,
                Winner::Second => e.1 += 1.0,
            }
        }
        let n = records.len() as f64;
        let mut p = Self::new(world.dim());
        for (z, (f, s)) in counts {
            p.push(world.feature_diff(&z)?, (f + s) / n, f / (f + s));
        }
        Ok(p)
    }

    fn margins(&self, phi: &[f64]) -> Vec<f64> {
        self.diffs
            .iter()
            .map(|d| d.iter().zip(phi).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn loss(&self, phi: &[f64], ridge: f64) -> f64 {
        let mut f = 0.0;
        for ((m, w), t) in self.margins(phi).into_iter().zip(&self.weights).zip(&self.targets) {
            f += w * (t * softplus(-m) + (1.0 - t) * softplus(m));
        }
        f + 0.5 * ridge * phi.iter().map(|x| x * x).sum::<f64>()
    }

    fn gradient(&self, phi: &[f64], ridge: f64) -> DVector<f64> {
        let mut g = DVector::from_iterator(self.dim, phi.iter().map(|x| ridge * x));
        for (((m, w), t), d) in self.margins(phi).into_iter().zip(&self.weights).zip(&self.targets).zip(&self.diffs) {
            let c = w * (sigmoid(m) - t);
            for (gi, di) in g.iter_mut().zip(d) {
                *gi += c * di;
            }
        }
        g
    }

    fn hessian(&self, phi: &[f64], ridge: f64) -> DMatrix<f64> {
        let mut h = DMatrix::<f64>::identity(self.dim, self.dim) * ridge;
        for ((m, w), d) in self.margins(phi).into_iter().zip(&self.weights).zip(&self.diffs) {
            let s = sigmoid(m);
            let c = w * s * (1.0 - s);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h[(i, j)] += c * d[i] * d[j];
                }
            }
        }
        h
    }

    /// Rank of the weighted difference span.
    fn span_rank(&self) -> usize {
        let mut m = DMatrix::<f64>::zeros(self.dim, self.dim);
        for (w, d) in self.weights.iter().zip(&self.diffs) {
            if *w > 0.0 {
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        m[(i, j)] += d[i] * d[j];
                    }
                }
            }
        }
        let ev = m.symmetric_eigen().eigenvalues;
        let top = ev.iter().cloned().fold(0.0, f64::max);
        ev.iter().filter(|&&e| e > top * 1e-12 && e > 0.0).count()
    }

    fn solve(&self, config: &FitConfig) -> Result<RewardParams> {
        config.validate()?;
        if config.ridge == 0.0 && self.span_rank() < self.dim {
            return Err(Error::domain(
                "feature differences do not span the parameter space; a positive ridge is required",
            ));
        }
        let mut phi = match &config.init {
            FitInit::Zero => vec![0.0; self.dim],
            FitInit::Given(p) => {
                if p.dim() != self.dim {
                    return Err(Error::domain("initial parameter has the wrong dimension"));
                }
                p.0.clone()
            }
        };
        let ridge = config.ridge;
        let mut f = self.loss(&phi, ridge);
        let mut gnorm = f64::INFINITY;
        for _ in 0..config.max_iters {
            let g = self.gradient(&phi, ridge);
            gnorm = g.norm();
            if gnorm <= config.grad_tol {
                return Ok(RewardParams(phi));
            }
            let h = self.hessian(&phi, ridge);
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                // singular Hessian (ridge 0, saturated margins): fall back to steepest descent
                None => -&g,
            };
            let slope = g.dot(&step);
            let slack = 4.0 * f64::EPSILON * f.abs().max(1.0);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = phi.iter().zip(step.iter()).map(|(p, s)| p + t * s).collect();
                let fc = self.loss(&cand, ridge);
                if fc <= f + 1e-4 * t * slope + slack {
                    phi = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let g = self.gradient(&phi, ridge);
        if g.norm() <= config.grad_tol {
            return Ok(RewardParams(phi));
        }
        Err(Error::NonConvergence {
            context: "reward fit".into(),
            iters: config.max_iters,
            residual: g.norm().min(gnorm),
            last: Some(phi),
        })
    }
}

/// Mean BT negative log-likelihood of `records` plus `ridge·‖φ‖²/2`.
pub fn empirical_nll(phi: &RewardParams, records: &[PreferenceRecord], world: &FeatureWorld, ridge: f64) -> Result<f64> {
    phi.check_dim(world)?;
    Ok(LogisticProblem::from_records(records, world)?.loss(&phi.0, ridge))
}

/// Analytic gradient of [`empirical_nll`].
pub fn empirical_nll_grad(
    phi: &RewardParams,
    records: &[PreferenceRecord],
    world: &FeatureWorld,
    ridge: f64,
) -> Result<Vec<f64>> {
    phi.check_dim(world)?;
    Ok(LogisticProblem::from_records(records, world)?
        .gradient(&phi.0, ridge)
        .iter()
        .copied()
        .collect())
}

/// Ridge-regularized maximum-likelihood reward on `records`.
pub fn fit_single_reward(records: &[PreferenceRecord], world: &FeatureWorld, config: &FitConfig) -> Result<RewardParams> {
    LogisticProblem::from_records(records, world)?.solve(config)
}

fn population_problem(pop: &Population, triples: &[ComparisonTriple]) -> Result<LogisticProblem> {
    let world = pop.world();
    let weights = triple_weights(world, triples)?;
    let mut p = LogisticProblem::new(world.dim());
    for (z, w) in triples.iter().zip(weights) {
        p.push(world.feature_diff(z)?, w, mixture_pref_prob(pop, z)?);
    }
    Ok(p)
}

/// Exact expected cross-entropy between the population mixture and `p_φ`
/// over `triples` (prompt-weighted, uniform within a prompt).
pub fn population_ce(phi: &RewardParams, pop: &Population, triples: &[ComparisonTriple]) -> Result<f64> {
    phi.check_dim(pop.world())?;
    Ok(population_problem(pop, triples)?.loss(&phi.0, 0.0))
}

/// φ*: the BT reward closest in cross-entropy to the population mixture.
pub fn fit_population_reward(pop: &Population, triples: &[ComparisonTriple], config: &FitConfig) -> Result<RewardParams> {
    population_problem(pop, triples)?.solve(config)
}

/// Population fits along [`RIDGE_PATH`] and their zero-ridge extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgePath {
    pub phi: RewardParams,
    pub fits: Vec<(f64, RewardParams)>,
    /// Largest parameter distance between the extrapolated φ and any fit on the path.
    pub spread: f64,
}

/// Fits at each ridge in [`RIDGE_PATH`], then extrapolates linearly in the
/// ridge from the two smallest values.
pub fn fit_population_reward_extrapolated(
    pop: &Population,
    triples: &[ComparisonTriple],
    config: &FitConfig,
) -> Result<RidgePath> {
    let problem = population_problem(pop, triples)?;
    let mut fits = Vec::with_capacity(RIDGE_PATH.len());
    let mut warm = config.init.clone();
    for &ridge in &RIDGE_PATH {
        let cfg = FitConfig {
            ridge,
            init: warm,
            ..config.clone()
        };
        let phi = problem.solve(&cfg)?;
        warm = FitInit::Given(phi.clone());
        fits.push((ridge, phi));
    }
    let (r1, p1) = &fits[fits.len() - 2];
    let (r2, p2) = &fits[fits.len() - 1];
    let slope = r2 / (r1 - r2);
    let phi = RewardParams(p2.0.iter().zip(&p1.0).map(|(b, a)| b - slope * (a - b)).collect());
    let spread = fits.iter().map(|(_, p)| p.distance(&phi)).fold(0.0, f64::max);
    Ok(RidgePath { phi, fits, spread })
}

/// Fraction of records whose winner is the response with `p_φ > 0.5`
/// (ties predict `first`).
pub fn prediction_accuracy(phi: &RewardParams, records: &[PreferenceRecord], world: &FeatureWorld) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::domain("no records to score"));
    }
    let mut hits = 0usize;
    for r in records {
        let m = phi.dot(&world.feature_diff(&r.triple)?);
        let predicted = if m >= 0.0 { Winner::First } else { Winner::Second };
        hits += usize::from(predicted == r.winner);
    }
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub changed: usize,
    pub loglik: f64,
    /// Clusters that received no annotators and kept their previous parameters.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub empty_clusters: Vec<usize>,
}

/// Output of hard EM: per-cluster rewards and the annotator assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRewardModel {
    pub k: usize,
    #[serde(rename = "params")]
    pub cluster_params: Vec<RewardParams>,
    pub assignment: BTreeMap<usize, usize>,
    pub history: Vec<EmIteration>,
    #[serde(default)]
    pub converged: bool,
}

impl MixtureRewardModel {
    pub fn total_loglik(&self) -> f64 {
        self.history.last().map_or(f64::NEG_INFINITY, |h| h.loglik)
    }

    /// EM iterations run (initial fit excluded).
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Per-annotator win counts keyed by triple.
struct AnnotatorData {
    id: usize,
    rows: Vec<(Vec<f64>, f64, f64)>,
    records: Vec<PreferenceRecord>,
}

impl AnnotatorData {
    fn loglik(&self, phi: &RewardParams) -> f64 {
        self.rows
            .iter()
            .map(|(d, f, s)| {
                let m = phi.dot(d);
                f * log_sigmoid(m) + s * log_sigmoid(-m)
            })
            .sum()
    }
}

fn group_by_annotator(records: &[PreferenceRecord], world: &FeatureWorld) -> Result<Vec<AnnotatorData>> {
    let mut by: BTreeMap<usize, Vec<PreferenceRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.annotator_id).or_default().push(*r);
    }
    by.into_iter()
        .map(|(id, recs)| {
            let mut counts: BTreeMap<ComparisonTriple, (f64, f64)> = BTreeMap::new();
            for r in &recs {
                let e = counts.entry(r.triple).or_default();
                match r.winner {
                    Winner::First => e.0 += 1.0,
                    Winner::Second => e.1 += 1.0,
                }
            }
            let rows = counts
                .into_iter()
                .map(|(z, (f, s))| Ok((world.feature_diff(&z)?, f, s)))
                .collect::<Result<_>>()?;
            Ok(AnnotatorData { id, rows, records: recs })
        })
        .collect()
}

fn m_step(
    data: &[AnnotatorData],
    assign: &[usize],
    params: &mut [RewardParams],
    world: &FeatureWorld,
    config: &FitConfig,
) -> Result<Vec<usize>> {
    let mut empty = Vec::new();
    for (c, phi) in params.iter_mut().enumerate() {
        let recs: Vec<PreferenceRecord> = data
            .iter()
            .zip(assign)
            .filter(|(_, &a)| a == c)
            .flat_map(|(d, _)| d.records.iter().copied())
            .collect();
        if recs.is_empty() {
            empty.push(c);
            continue;
        }
        let cfg = FitConfig {
            init: FitInit::Given(phi.clone()),
            ..config.clone()
        };
        *phi = fit_single_reward(&recs, world, &cfg).map_err(|e| e.in_stage(&format!("M-step cluster {c}")))?;
    }
    Ok(empty)
}

/// Hard E-step: argmax of the annotator's log-likelihood, ties to the lowest index.
fn e_step(data: &[AnnotatorData], params: &[RewardParams]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let assign = data
        .iter()
        .map(|d| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, phi) in params.iter().enumerate() {
                let ll = d.loglik(phi);
                if ll > best.1 {
                    best = (c, ll);
                }
            }
            total += best.1;
            best.0
        })
        .collect();
    (assign, total)
}

fn total_loglik(data: &[AnnotatorData], assign: &[usize], params: &[RewardParams]) -> f64 {
    data.iter().zip(assign).map(|(d, &a)| d.loglik(&params[a])).sum()
}

fn run_em(
    data: &[AnnotatorData],
    world: &FeatureWorld,
    mut params: Vec<RewardParams>,
    mut assign: Vec<usize>,
    fit_first: bool,
    config: &FitConfig,
) -> Result<MixtureRewardModel> {
    let k = params.len();
    if fit_first {
        m_step(data, &assign, &mut params, world, config)?;
    }
    let mut history = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_iters {
        let (next, _) = e_step(data, &params);
        let changed = next.iter().zip(&assign).filter(|(a, b)| a != b).count();
        // a Given start has no prior assignment, so its first E-step always proceeds
        if changed == 0 && (fit_first || iter > 0) {
            history.push(EmIteration {
                changed: 0,
                loglik: total_loglik(data, &assign, &params),
                empty_clusters: Vec::new(),
            });
            converged = true;
            break;
        }
        assign = next;
        let empty_clusters = m_step(data, &assign, &mut params, world, config)?;
        history.push(EmIteration {
            changed,
            loglik: total_loglik(data, &assign, &params),
            empty_clusters,
        });
    }
    Ok(MixtureRewardModel {
        k,
        cluster_params: params,
        assignment: data.iter().map(|d| d.id).zip(assign).collect(),
        history,
        converged,
    })
}

/// Hard EM over annotators with `restarts` seeded random initial
/// assignments; returns the restart with the highest final log-likelihood.
pub fn em_fit(
    records: &[PreferenceRecord],
    world: &FeatureWorld,
    k: usize,
    config: &FitConfig,
    restarts: usize,
    seed: u64,
) -> Result<MixtureRewardModel> {
    if k == 0 {
        return Err(Error::domain("K must be at least 1"));
    }
    if restarts == 0 {
        return Err(Error::domain("restarts must be at least 1"));
    }
    config.validate()?;
    let data = group_by_annotator(records, world)?;
    if data.is_empty() {
        return Err(Error::domain("no records to cluster"));
    }
    let mut best: Option<MixtureRewardModel> = None;
    for r in 0..restarts {
        let mut rng = substream(seed, "em-restart", r as u64);
        let assign: Vec<usize> = data.iter().map(|_| rng.gen_range(0..k)).collect();
        let params = vec![RewardParams::zeros(world.dim()); k];
        let model = run_em(&data, world, params, assign, true, config)?;
        if best.as_ref().is_none_or(|b| model.total_loglik() > b.total_loglik()) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Hard EM from given ("pretrained") cluster rewards; the first step is an E-step.
pub fn em_fit_from(
    records: &[PreferenceRecord],
    world: &FeatureWorld,
    init: Vec<RewardParams>,
    config: &FitConfig,
) -> Result<MixtureRewardModel> {
    if init.is_empty() {
        return Err(Error::domain("K must be at least 1"));
    }
    for p in &init {
        p.check_dim(world)?;
    }
    config.validate()?;
    let data = group_by_annotator(records, world)?;
    if data.is_empty() {
        return Err(Error::domain("no records to cluster"));
    }
    let assign = vec![usize::MAX; data.len()];
    run_em(&data, world, init, assign, false, config)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Best fraction of annotators whose cluster matches their hidden group under
/// any cluster-to-group relabeling.
pub fn cluster_accuracy(model: &MixtureRewardModel, labels: &HiddenLabels) -> Result<f64> {
    if model.assignment.is_empty() {
        return Err(Error::domain("model has no assignments"));
    }
    let mut pairs = Vec::with_capacity(model.assignment.len());
    for (&a, &c) in &model.assignment {
        let g = labels
            .get(a)
            .ok_or_else(|| Error::domain(format!("annotator {a} missing from label table")))?;
        pairs.push((c, g));
    }
    let m = pairs
        .iter()
        .map(|&(c, g)| c.max(g) + 1)
        .max()
        .unwrap_or(1)
        .max(model.k);
    if m > 8 {
        return Err(Error::domain(format!("permutation search supports at most 8 labels, got {m}")));
    }
    let best = permutations(m)
        .into_iter()
        .map(|perm| pairs.iter().filter(|&&(c, g)| perm[c] == g).count())
        .max()
        .unwrap_or(0);
    Ok(best as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthpop::sample_dataset;
    use crate::world::enumerate_comparisons;

    // mpmath references
    const NEG_LN_SIGMA_1: f64 = 0.313_261_687_518_222_8;
    const TWO_ARM_MIX: f64 = 0.638_635_147_178_002_9;
    const TWO_ARM_HALF_LOGIT: f64 = 0.284_722_598_021_421_3;
    const TWO_ARM_ENTROPY: f64 = 0.654_199_441_813_247_6;

    fn rec(a: usize, winner: Winner) -> PreferenceRecord {
        PreferenceRecord {
            annotator_id: a,
            triple: ComparisonTriple { prompt: 0, first: 0, second: 1 },
            winner,
        }
    }

    fn line_world() -> FeatureWorld {
        FeatureWorld::uniform(1, vec![("x".into(), vec![("a".into(), vec![1.0]), ("b".into(), vec![0.0])])]).unwrap()
    }

    #[test]
    fn nll_examples() {
        let w = FeatureWorld::two_arm();
        let recs = vec![rec(0, Winner::First), rec(0, Winner::Second), rec(1, Winner::First)];
        let nll0 = empirical_nll(&RewardParams::zeros(2), &recs, &w, 0.0).unwrap();
        assert!((nll0 - std::f64::consts::LN_2).abs() < 1e-15);
        let one = empirical_nll(&RewardParams(vec![1.0, 0.0]), &[rec(0, Winner::First)], &w, 0.0).unwrap();
        assert!((one - NEG_LN_SIGMA_1).abs() < 1e-15);
        let sat = empirical_nll(&RewardParams(vec![20.0, 0.0]), &[rec(0, Winner::First); 5], &w, 0.0).unwrap();
        assert!(sat <= 1e-8);
        assert!(matches!(empirical_nll(&RewardParams::zeros(2), &[], &w, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn fit_recovers_logit_of_win_rate() {
        let w = line_world();
        let mut recs = vec![rec(0, Winner::First); 3];
        recs.push(rec(0, Winner::Second));
        let cfg = FitConfig { ridge: 0.0, ..FitConfig::default() };
        let phi = fit_single_reward(&recs, &w, &cfg).unwrap();
        assert!((phi.0[0] - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn all_ties_fit_to_zero() {
        let w = FeatureWorld::two_arm();
        let recs = vec![rec(0, Winner::First), rec(0, Winner::Second)];
        let phi = fit_single_reward(&recs, &w, &FitConfig::default()).unwrap();
        assert!(phi.norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_needs_ridge() {
        let w = FeatureWorld::two_arm();
        let recs = vec![rec(0, Winner::First), rec(0, Winner::Second), rec(0, Winner::First)];
        let cfg = FitConfig { ridge: 0.0, ..FitConfig::default() };
        assert!(matches!(fit_single_reward(&recs, &w, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn separable_data_without_ridge_fails_to_converge() {
        let w = line_world();
        let cfg = FitConfig { ridge: 0.0, max_iters: 20, ..FitConfig::default() };
        match fit_single_reward(&[rec(0, Winner::First); 4], &w, &cfg) {
            Err(Error::NonConvergence { last: Some(p), residual, .. }) => {
                assert!(p[0] > 5.0);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn population_ce_examples() {
        let pop = Population::two_arm(1);
        let zs = enumerate_comparisons(pop.world());
        let ce0 = population_ce(&RewardParams::zeros(2), &pop, &zs).unwrap();
        assert!((ce0 - std::f64::consts::LN_2).abs() < 1e-15);
        let phi = RewardParams(vec![TWO_ARM_HALF_LOGIT, -TWO_ARM_HALF_LOGIT]);
        let ce = population_ce(&phi, &pop, &zs).unwrap();
        assert!((ce - TWO_ARM_ENTROPY).abs() < 1e-12);
    }

    #[test]
    fn population_fit_two_arm_is_min_norm() {
        let pop = Population::two_arm(1);
        let zs = enumerate_comparisons(pop.world());
        let path = fit_population_reward_extrapolated(&pop, &zs, &FitConfig::default()).unwrap();
        assert!((path.phi.0[0] - TWO_ARM_HALF_LOGIT).abs() < 1e-8, "{:?}", path.phi);
        assert!((path.phi.0[1] + TWO_ARM_HALF_LOGIT).abs() < 1e-8);
        let p = sigmoid(path.phi.0[0] - path.phi.0[1]);
        assert!((p - TWO_ARM_MIX).abs() < 1e-8);
    }

    #[test]
    fn population_fit_single_group_is_realizable() {
        let w = FeatureWorld::uniform(
            2,
            vec![(
                "x".into(),
                vec![
                    ("a".into(), vec![1.0, 0.0]),
                    ("b".into(), vec![0.0, 1.0]),
                    ("c".into(), vec![0.5, 0.5]),
                    ("d".into(), vec![-1.0, 0.3]),
                ],
            )],
        )
        .unwrap();
        let truth = RewardParams(vec![0.7, -1.3]);
        let pop = Population::from_counts(w, vec![(truth.clone(), 1)]).unwrap();
        let zs = enumerate_comparisons(pop.world());
        let path = fit_population_reward_extrapolated(&pop, &zs, &FitConfig::default()).unwrap();
        for z in &zs {
            let a = crate::world::pref_prob(&path.phi, pop.world(), z).unwrap();
            let b = crate::world::pref_prob(&truth, pop.world(), z).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mirrored_groups_fit_to_zero() {
        let pop = Population::from_counts(
            FeatureWorld::two_arm(),
            vec![(RewardParams(vec![1.0, 0.0]), 3), (RewardParams(vec![0.0, 1.0]), 3)],
        )
        .unwrap();
        let zs = enumerate_comparisons(pop.world());
        let phi = fit_population_reward(&pop, &zs, &FitConfig::default()).unwrap();
        assert!(phi.norm() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let pop = Population::two_arm(5);
        let d = sample_dataset(&pop, 20, 9).unwrap();
        let w = pop.world();
        let mut rng = substream(1, "fd", 0);
        for _ in 0..10 {
            let phi = RewardParams(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let g = empirical_nll_grad(&phi, d.records(), w, 1e-3).unwrap();
            for i in 0..2 {
                let h = 1e-6;
                let mut up = phi.clone();
                up.0[i] += h;
                let mut dn = phi.clone();
                dn.0[i] -= h;
                let fd = (empirical_nll(&up, d.records(), w, 1e-3).unwrap() - empirical_nll(&dn, d.records(), w, 1e-3).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn cluster_accuracy_examples() {
        let labels: HiddenLabels = (0..60).map(|a| (a, a / 30)).collect();
        let mk = |assignment: BTreeMap<usize, usize>| MixtureRewardModel {
            k: 2,
            cluster_params: vec![RewardParams::zeros(2); 2],
            assignment,
            history: vec![],
            converged: true,
        };
        let perfect = mk((0..60).map(|a| (a, a / 30)).collect());
        assert_eq!(cluster_accuracy(&perfect, &labels).unwrap(), 1.0);
        let swapped = mk((0..60).map(|a| (a, 1 - a / 30)).collect());
        assert_eq!(cluster_accuracy(&swapped, &labels).unwrap(), 1.0);
        let half = mk((0..60).map(|a| (a, a % 2)).collect());
        assert_eq!(cluster_accuracy(&half, &labels).unwrap(), 0.5);
        let partial: HiddenLabels = (0..10).map(|a| (a, 0)).collect();
        assert!(matches!(cluster_accuracy(&perfect, &partial), Err(Error::Domain(_))));
    }

    #[test]
    fn em_with_one_cluster_matches_single_fit() {
        let pop = Population::two_arm(10);
        let d = sample_dataset(&pop, 30, 4).unwrap();
        let cfg = FitConfig::default();
        let m = em_fit(d.records(), pop.world(), 1, &cfg, 2, 0).unwrap();
        let single = fit_single_reward(d.records(), pop.world(), &cfg).unwrap();
        assert!(m.assignment.values().all(|&c| c == 0));
        assert!(m.cluster_params[0].distance(&single) < 1e-8);
        assert!(m.converged);
    }

    #[test]
    fn em_recovers_two_arm_groups() {
        let pop = Population::two_arm(30);
        let d = sample_dataset(&pop, 50, 17).unwrap();
        let m = em_fit(d.records(), pop.world(), 2, &FitConfig::default(), 3, 17).unwrap();
        assert_eq!(cluster_accuracy(&m, d.hidden_labels()).unwrap(), 1.0);
        assert!(m.converged && m.iterations() <= 10);
        for w in m.history.windows(2) {
            assert!(w[1].loglik >= w[0].loglik - 1e-8, "{:?}", m.history);
        }
    }

    #[test]
    fn em_from_identical_inits_flags_empty_cluster() {
        let pop = Population::two_arm(10);
        let d = sample_dataset(&pop, 20, 8).unwrap();
        let init = vec![RewardParams(vec![0.5, 0.0]); 2];
        let m = em_fit_from(d.records(), pop.world(), init, &FitConfig::default()).unwrap();
        // identical rewards tie everywhere, so the first E-step sends everyone to cluster 0
        assert_eq!(m.history[0].changed, d.num_annotators());
        assert_eq!(m.history[0].empty_clusters, vec![1]);
    }

    #[test]
    fn model_json_shape() {
        let pop = Population::two_arm(2);
        let d = sample_dataset(&pop, 5, 1).unwrap();
        let m = em_fit(d.records(), pop.world(), 2, &FitConfig::default(), 1, 1).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["k"], 2);
        assert!(v["params"].is_array());
        assert!(v["assignment"]["0"].is_number());
        assert!(v["history"][0]["changed"].is_number());
        let back: MixtureRewardModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
