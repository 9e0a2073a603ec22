//! Ground-truth annotator populations and synthetic preference datasets.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::world::{enumerate_comparisons, pref_prob, ComparisonTriple, FeatureWorld, RewardParams};

pub const ETA_SUM_TOL: f64 = 1e-12;

/// One latent annotator group with its true reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: usize,
    pub phi_star: RewardParams,
    pub eta: f64,
    pub annotator_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    world: FeatureWorld,
    groups: Vec<GroupSpec>,
}

impl Population {
    pub fn new(world: FeatureWorld, groups: Vec<GroupSpec>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::domain("population needs at least one group"));
        }
        let mut sum = 0.0;
        for (i, g) in groups.iter().enumerate() {
            if g.group_id != i {
                return Err(Error::domain(format!(
                    "group ids must be contiguous from 0; position {i} has id {}",
                    g.group_id
                )));
            }
            if !(g.eta > 0.0 && g.eta <= 1.0) {
                return Err(Error::domain(format!("group {i} has eta {} outside (0, 1]", g.eta)));
            }
            if g.annotator_count == 0 {
                return Err(Error::domain(format!("group {i} has no annotators")));
            }
            g.phi_star.check_dim(&world)?;
            sum += g.eta;
        }
        if (sum - 1.0).abs() > ETA_SUM_TOL {
            return Err(Error::domain(format!("group etas sum to {sum}, not 1")));
        }
        Ok(Self { world, groups })
    }

    /// Builds groups from `(φ*, annotator_count)` with η proportional to the
    /// annotator counts.
    pub fn from_counts(world: FeatureWorld, groups: Vec<(RewardParams, usize)>) -> Result<Self> {
        let total: usize = groups.iter().map(|(_, n)| n).sum();
        if total == 0 {
            return Err(Error::domain("population has no annotators"));
        }
        let specs = groups
            .into_iter()
            .enumerate()
            .map(|(i, (phi, n))| GroupSpec {
                group_id: i,
                phi_star: phi,
                eta: n as f64 / total as f64,
                annotator_count: n,
            })
            .collect();
        Self::new(world, specs)
    }

    /// The canonical two-arm instance: group A (`φ = (1, 0)`, η = 0.8) and
    /// group B (`φ = (0, 1)`, η = 0.2), `annotators` per group.
    pub fn two_arm(annotators: usize) -> Self {
        Self::new(
            FeatureWorld::two_arm(),
            vec![
                GroupSpec {
                    group_id: 0,
                    phi_star: RewardParams(vec![1.0, 0.0]),
                    eta: 0.8,
                    annotator_count: annotators,
                },
                GroupSpec {
                    group_id: 1,
                    phi_star: RewardParams(vec![0.0, 1.0]),
                    eta: 0.2,
                    annotator_count: annotators,
                },
            ],
        )
        .expect("two-arm population is valid")
    }

    pub fn world(&self) -> &FeatureWorld {
        &self.world
    }

    pub fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, u: usize) -> Result<&GroupSpec> {
        self.groups
            .get(u)
            .ok_or_else(|| Error::lookup(format!("unknown group {u}")))
    }

    pub fn eta(&self, u: usize) -> f64 {
        self.groups[u].eta
    }
}

/// `p_u*(z)`: probability that group `u` prefers `z.first`.
pub fn group_pref_prob(pop: &Population, u: usize, z: &ComparisonTriple) -> Result<f64> {
    pref_prob(&pop.group(u)?.phi_star, pop.world(), z)
}

/// `Σ_u η(u)·p_u*(z)`.
pub fn mixture_pref_prob(pop: &Population, z: &ComparisonTriple) -> Result<f64> {
    let mut p = 0.0;
    for g in pop.groups() {
        p += g.eta * pref_prob(&g.phi_star, pop.world(), z)?;
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferenceRecord {
    pub annotator_id: usize,
    pub triple: ComparisonTriple,
    pub winner: Winner,
}

/// Annotator → true group. Only evaluation code should read this.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HiddenLabels(BTreeMap<usize, usize>);

impl HiddenLabels {
    pub fn get(&self, annotator: usize) -> Option<usize> {
        self.0.get(&annotator).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(&a, &g)| (a, g))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn insert(&mut self, annotator: usize, group: usize) {
        self.0.insert(annotator, group);
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (annotator, group) in self.iter() {
            serde_json::to_writer(&mut w, &LabelLine { annotator, group })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut out = Self::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: LabelLine = serde_json::from_str(&line)?;
            out.insert(l.annotator, l.group);
        }
        Ok(out)
    }
}

impl FromIterator<(usize, usize)> for HiddenLabels {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    annotator: usize,
    group: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    annotator: usize,
    prompt: String,
    first: String,
    second: String,
    winner: Winner,
}

/// Annotator-tagged comparisons plus the hidden group table.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    records: Vec<PreferenceRecord>,
    labels: HiddenLabels,
    world_ref: String,
}

impl PreferenceDataset {
    pub fn new(records: Vec<PreferenceRecord>, labels: HiddenLabels, world_ref: String) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| labels.get(r.annotator_id).is_none()) {
            return Err(Error::lookup(format!(
                "record annotator {} missing from annotator table",
                r.annotator_id
            )));
        }
        Ok(Self {
            records,
            labels,
            world_ref,
        })
    }

    /// What fitting code is allowed to see.
    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    /// Evaluation-only side channel.
    pub fn hidden_labels(&self) -> &HiddenLabels {
        &self.labels
    }

    pub fn world_ref(&self) -> &str {
        &self.world_ref
    }

    pub fn num_annotators(&self) -> usize {
        self.labels.len()
    }
}

/// Short content hash of a world's JSON form.
pub fn world_fingerprint(world: &FeatureWorld) -> String {
    let json = world.to_json().expect("world serializes");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(&digest[..8])
}

/// Samples annotators group by group. Annotator ids run contiguously in group
/// order; each annotator draws `comparisons_per_annotator` triples uniformly
/// with replacement and a BT winner under its group's reward. Each annotator
/// uses its own substream of `seed`.
pub fn sample_dataset(pop: &Population, comparisons_per_annotator: usize, seed: u64) -> Result<PreferenceDataset> {
    sample_dataset_in_stream(pop, comparisons_per_annotator, seed, "annotator")
}

/// [`sample_dataset`] under a named substream family, so that e.g. train and
/// test sets from the same seed are independent.
pub fn sample_dataset_in_stream(
    pop: &Population,
    comparisons_per_annotator: usize,
    seed: u64,
    stream: &str,
) -> Result<PreferenceDataset> {
    if comparisons_per_annotator == 0 {
        return Err(Error::domain("comparisons_per_annotator must be at least 1"));
    }
    let triples = enumerate_comparisons(pop.world());
    // p_u*(z) table, indexed [group][triple]
    let probs: Vec<Vec<f64>> = pop
        .groups()
        .iter()
        .map(|g| triples.iter().map(|z| pref_prob(&g.phi_star, pop.world(), z)).collect())
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut labels = HiddenLabels::default();
    let mut annotator = 0usize;
    for g in pop.groups() {
        for _ in 0..g.annotator_count {
            labels.insert(annotator, g.group_id);
            let mut rng = substream(seed, stream, annotator as u64);
            for _ in 0..comparisons_per_annotator {
                let t = rng.gen_range(0..triples.len());
                let winner = if rng.gen::<f64>() < probs[g.group_id][t] {
                    Winner::First
                } else {
                    Winner::Second
                };
                records.push(PreferenceRecord {
                    annotator_id: annotator,
                    triple: triples[t],
                    winner,
                });
            }
            annotator += 1;
        }
    }
    PreferenceDataset::new(records, labels, world_fingerprint(pop.world()))
}

/// Writes records as JSON Lines using the world's string identifiers.
pub fn write_records_jsonl<W: Write>(records: &[PreferenceRecord], world: &FeatureWorld, mut w: W) -> Result<()> {
    for r in records {
        let p = &world.prompts()[r.triple.prompt];
        let line = RecordLine {
            annotator: r.annotator_id,
            prompt: p.id.clone(),
            first: p.responses[r.triple.first].id.clone(),
            second: p.responses[r.triple.second].id.clone(),
            winner: r.winner,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON Lines records. Non-canonical pairs are re-oriented and the
/// winner flag flipped accordingly.
pub fn read_records_jsonl<R: BufRead>(r: R, world: &FeatureWorld) -> Result<Vec<PreferenceRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::domain(format!("line {}: {e}", n + 1)))?;
        let p = world.prompt_index(&l.prompt)?;
        let a = world.response_index(p, &l.first)?;
        let b = world.response_index(p, &l.second)?;
        let (triple, reversed) = ComparisonTriple::canonical(world, p, a, b)?;
        let winner = match (l.winner, reversed) {
            (w, false) => w,
            (Winner::First, true) => Winner::Second,
            (Winner::Second, true) => Winner::First,
        };
        out.push(PreferenceRecord {
            annotator_id: l.annotator,
            triple,
            winner,
        });
    }
    Ok(out)
}
