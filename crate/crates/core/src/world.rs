//! Finite prompt/response worlds with linear rewards and Bradley-Terry
//! preference probabilities.
//!
//! Every expectation elsewhere in the crate is an exact finite sum over a
//! [`FeatureWorld`], so nothing here samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the prompt-weight normalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub weight: f64,
    pub responses: Vec<Response>,
}

/// `(prompt id, [(response id, features)])`.
pub type PromptSpec = (String, Vec<(String, Vec<f64>)>);

/// A finite set of prompts, each with at least two candidate responses and a
/// feature vector per `(prompt, response)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWorld {
    dim: usize,
    prompts: Vec<Prompt>,
    feature_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct WorldDoc {
    dim: usize,
    prompts: Vec<Prompt>,
}

impl FeatureWorld {
    pub fn new(dim: usize, prompts: Vec<Prompt>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Structural("feature dimension must be positive".into()));
        }
        if prompts.is_empty() {
            return Err(Error::Structural("world has no prompts".into()));
        }
        let mut weight_sum = 0.0;
        let mut bound: f64 = 0.0;
        for (i, p) in prompts.iter().enumerate() {
            if p.responses.len() < 2 {
                return Err(Error::Structural(format!(
                    "prompt `{}` has {} response(s); at least 2 are required",
                    p.id,
                    p.responses.len()
                )));
            }
            if prompts[..i].iter().any(|q| q.id == p.id) {
                return Err(Error::Structural(format!("duplicate prompt id `{}`", p.id)));
            }
            if !(p.weight >= 0.0) || !p.weight.is_finite() {
                return Err(Error::domain(format!("prompt `{}` has weight {}", p.id, p.weight)));
            }
            weight_sum += p.weight;
            for (j, r) in p.responses.iter().enumerate() {
                if p.responses[..j].iter().any(|s| s.id == r.id) {
                    return Err(Error::Structural(format!(
                        "duplicate response id `{}` under prompt `{}`",
                        r.id, p.id
                    )));
                }
                if r.features.len() != dim {
                    return Err(Error::Structural(format!(
                        "feature vector of ({}, {}) has length {}, expected {dim}",
                        p.id,
                        r.id,
                        r.features.len()
                    )));
                }
                if r.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::domain(format!("non-finite feature at ({}, {})", p.id, r.id)));
                }
                bound = bound.max(norm(&r.features));
            }
        }
        if (weight_sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::domain(format!("prompt weights sum to {weight_sum}, not 1")));
        }
        if bound <= 0.0 {
            return Err(Error::domain("all feature vectors are zero (D = 0)"));
        }
        Ok(Self {
            dim,
            prompts,
            feature_bound: bound,
        })
    }

    /// Builds a world with uniform prompt weights from `(prompt id, [(response id, features)])`.
    pub fn uniform(dim: usize, prompts: Vec<PromptSpec>) -> Result<Self> {
        let n = prompts.len().max(1) as f64;
        let prompts = prompts
            .into_iter()
            .map(|(id, responses)| Prompt {
                id,
                weight: 1.0 / n,
                responses: responses
                    .into_iter()
                    .map(|(id, features)| Response { id, features })
                    .collect(),
            })
            .collect();
        Self::new(dim, prompts)
    }

    /// The canonical two-arm world: one prompt, `y0` with features `(1, 0)` and
    /// `y1` with features `(0, 1)`.
    pub fn two_arm() -> Self {
        Self::uniform(
            2,
            vec![(
                "x0".into(),
                vec![("y0".into(), vec![1.0, 0.0]), ("y1".into(), vec![0.0, 1.0])],
            )],
        )
        .expect("two-arm world is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// D: the largest Euclidean norm among stored feature vectors.
    pub fn feature_bound(&self) -> f64 {
        self.feature_bound
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn num_responses(&self, prompt: usize) -> usize {
        self.prompts[prompt].responses.len()
    }

    pub fn prompt_weight(&self, prompt: usize) -> f64 {
        self.prompts[prompt].weight
    }

    /// Total number of `(prompt, response)` pairs.
    pub fn num_pairs(&self) -> usize {
        self.prompts.iter().map(|p| p.responses.len()).sum()
    }

    pub fn features(&self, prompt: usize, response: usize) -> Result<&[f64]> {
        self.prompts
            .get(prompt)
            .and_then(|p| p.responses.get(response))
            .map(|r| r.features.as_slice())
            .ok_or_else(|| Error::lookup(format!("no (prompt {prompt}, response {response}) in world")))
    }

    pub fn prompt_index(&self, id: &str) -> Result<usize> {
        self.prompts
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| Error::lookup(format!("unknown prompt `{id}`")))
    }

    pub fn response_index(&self, prompt: usize, id: &str) -> Result<usize> {
        self.prompts
            .get(prompt)
            .ok_or_else(|| Error::lookup(format!("unknown prompt index {prompt}")))?
            .responses
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::lookup(format!("unknown response `{id}` for prompt {prompt}")))
    }

    /// `ψ(first) − ψ(second)` for a comparison.
    pub fn feature_diff(&self, z: &ComparisonTriple) -> Result<Vec<f64>> {
        let a = self.features(z.prompt, z.first)?;
        let b = self.features(z.prompt, z.second)?;
        Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&WorldDoc {
            dim: self.dim,
            prompts: self.prompts.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: WorldDoc = serde_json::from_str(s)?;
        Self::new(doc.dim, doc.prompts)
    }
}

/// Linear reward parameters φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardParams(pub Vec<f64>);

impl RewardParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        dot(&self.0, v)
    }

    pub fn distance(&self, other: &RewardParams) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub(crate) fn check_dim(&self, world: &FeatureWorld) -> Result<()> {
        if self.0.len() != world.dim() {
            return Err(Error::domain(format!(
                "reward parameter has dimension {}, world has {}",
                self.0.len(),
                world.dim()
            )));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for RewardParams {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A canonical comparison: `first` precedes `second` in the prompt's response list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComparisonTriple {
    pub prompt: usize,
    pub first: usize,
    pub second: usize,
}

impl ComparisonTriple {
    /// Builds a canonical triple, swapping the responses if needed. Returns the
    /// triple and whether the inputs were reversed.
    pub fn canonical(world: &FeatureWorld, prompt: usize, a: usize, b: usize) -> Result<(Self, bool)> {
        if prompt >= world.num_prompts() {
            return Err(Error::lookup(format!("unknown prompt index {prompt}")));
        }
        let n = world.num_responses(prompt);
        if a >= n || b >= n {
            return Err(Error::lookup(format!("response index out of range for prompt {prompt}")));
        }
        if a == b {
            return Err(Error::domain("a comparison needs two distinct responses"));
        }
        let (first, second, reversed) = if a < b { (a, b, false) } else { (b, a, true) };
        Ok((
            Self {
                prompt,
                first,
                second,
            },
            reversed,
        ))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `r_φ(y, x) = ⟨φ, ψ(y, x)⟩`.
pub fn linear_reward(phi: &RewardParams, world: &FeatureWorld, prompt: usize, response: usize) -> Result<f64> {
    let psi = world.features(prompt, response)?;
    phi.check_dim(world)?;
    Ok(phi.dot(psi))
}

/// Bradley-Terry probability that the first item wins: `σ(r_first − r_second)`.
pub fn bt_prob(r_first: f64, r_second: f64) -> Result<f64> {
    if !r_first.is_finite() || !r_second.is_finite() {
        return Err(Error::domain(format!("non-finite reward ({r_first}, {r_second})")));
    }
    Ok(sigmoid(r_first - r_second))
}

/// Probability that `z.first` beats `z.second` under reward `phi`.
pub fn pref_prob(phi: &RewardParams, world: &FeatureWorld, z: &ComparisonTriple) -> Result<f64> {
    let a = linear_reward(phi, world, z.prompt, z.first)?;
    let b = linear_reward(phi, world, z.prompt, z.second)?;
    bt_prob(a, b)
}

/// All canonical unordered response pairs, in prompt order then lexicographic
/// `(first, second)` order.
pub fn enumerate_comparisons(world: &FeatureWorld) -> Vec<ComparisonTriple> {
    let mut out = Vec::new();
    for (prompt, p) in world.prompts().iter().enumerate() {
        let n = p.responses.len();
        for first in 0..n {
            for second in first + 1..n {
                out.push(ComparisonTriple {
                    prompt,
                    first,
                    second,
                });
            }
        }
    }
    out
}

/// Carrier weights for a list of triples: each prompt's weight spread
/// uniformly over that prompt's triples in the list, renormalized over the
/// prompts that appear.
pub fn triple_weights(world: &FeatureWorld, triples: &[ComparisonTriple]) -> Result<Vec<f64>> {
    if triples.is_empty() {
        return Err(Error::domain("empty triple list"));
    }
    let mut per_prompt = vec![0usize; world.num_prompts()];
    for z in triples {
        *per_prompt
            .get_mut(z.prompt)
            .ok_or_else(|| Error::lookup(format!("unknown prompt index {}", z.prompt)))? += 1;
    }
    let mass: f64 = per_prompt
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(p, _)| world.prompt_weight(p))
        .sum();
    if mass <= 0.0 {
        return Err(Error::domain("triples cover only zero-weight prompts"));
    }
    Ok(triples
        .iter()
        .map(|z| world.prompt_weight(z.prompt) / (per_prompt[z.prompt] as f64 * mass))
        .collect())
}
