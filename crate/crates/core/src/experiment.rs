//! File-based experiment driver behind the `diverse-prefs` binary.
//!
//! A run reads an [`ExperimentConfig`] (TOML), executes one [`Command`], and
//! writes its artifacts plus a `manifest.json` into an output directory.
//! Stages that consume an upstream artifact (records, fitted reward) read it
//! from the output directory when present and regenerate it from the config
//! otherwise. Every random draw comes from a named substream of the seed, so
//! the two paths agree.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    minority_sweep, random_population, summarize_sweep, sweep_instance, verify_lemma1, verify_theorem1,
    write_sweep_csv, RandomInstanceSpec, SweepConfig,
};
use crate::error::{Error, Result};
use crate::gridworld::{grid_maxmin, rollout, soft_value_iteration, trajectory_to_json, uniform_actions, GridMap};
use crate::maxmin::{min_group_objective, solve_maxmin, MaxMinConfig, SolverMode};
use crate::policy::{align_gap, gibbs_policy, regularized_objective, Policy};
use crate::reward::{cluster_accuracy, em_fit, fit_single_reward, prediction_accuracy, FitConfig, FitInit};
use crate::synthpop::{
    read_records_jsonl, sample_dataset, write_records_jsonl, GroupSpec, HiddenLabels, Population, PreferenceRecord,
};
use crate::world::{FeatureWorld, Prompt, RewardParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    FitSingle,
    FitMixture,
    AlignSingle,
    AlignMaxmin,
    VerifyBounds,
    Sweep,
    Gridworld,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::FitSingle => "fit-single",
            Command::FitMixture => "fit-mixture",
            Command::AlignSingle => "align-single",
            Command::AlignMaxmin => "align-maxmin",
            Command::VerifyBounds => "verify-bounds",
            Command::Sweep => "sweep",
            Command::Gridworld => "gridworld",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldSpec {
    File { file: PathBuf },
    Inline { dim: usize, prompts: Vec<Prompt> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub phi: Vec<f64>,
    pub annotators: usize,
    /// Omit on every group to make η proportional to annotator counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub groups: Vec<GroupConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub comparisons: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { comparisons: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub ridge: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitConfig::default();
        Self {
            ridge: d.ridge,
            grad_tol: d.grad_tol,
            max_iters: d.max_iters,
        }
    }
}

impl FitSection {
    pub fn to_fit_config(&self) -> FitConfig {
        FitConfig {
            ridge: self.ridge,
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            init: FitInit::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for EmSection {
    fn default() -> Self {
        Self {
            k: 2,
            restarts: 5,
            max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSource {
    /// The population's true group rewards.
    True,
    /// Cluster rewards from hard EM, with η from cluster sizes.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxMinSection {
    pub steps: usize,
    pub step_size0: f64,
    pub tol: f64,
    pub mode: SolverMode,
    pub rewards: RewardSource,
}

impl Default for MaxMinSection {
    fn default() -> Self {
        let d = MaxMinConfig::default();
        Self {
            steps: d.steps,
            step_size0: d.step_size0,
            tol: d.tol,
            mode: d.mode,
            rewards: RewardSource::True,
        }
    }
}

impl MaxMinSection {
    pub fn to_maxmin_config(&self) -> MaxMinConfig {
        MaxMinConfig {
            steps: self.steps,
            step_size0: self.step_size0,
            tol: self.tol,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepInstance {
    /// The built-in three-prompt instance.
    Default,
    /// The configured world with groups 0 (majority) and 1 (minority).
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub instance: SweepInstance,
    pub ratios: Vec<usize>,
    pub annotators_base: usize,
    pub comparisons: usize,
    /// Seeds `seed, seed + 1, ...`.
    pub seeds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            instance: SweepInstance::Default,
            ratios: vec![1, 2, 6, 10],
            annotators_base: 10,
            comparisons: 50,
            seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub random_instances: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self { random_instances: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridworldSection {
    /// `"default"` or a path to a map file.
    pub map: String,
    /// Overrides the map's β.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub tol: f64,
}

impl Default for GridworldSection {
    fn default() -> Self {
        Self {
            map: "default".into(),
            beta: None,
            tol: 1e-6,
        }
    }
}

/// Mirrors the TOML config file field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub world: WorldSpec,
    pub population: PopulationConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub em: EmSection,
    #[serde(default)]
    pub maxmin: MaxMinSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub gridworld: GridworldSection,
}

fn default_beta() -> f64 {
    1.0
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub beta: Option<f64>,
    pub ratios: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub restarts: Option<usize>,
    pub map: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.to_string().trim_end().to_string())
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Reads, parses, resolves relative file paths against the config's
    /// directory, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let WorldSpec::File { file } = &mut cfg.world {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        if cfg.gridworld.map != "default" && Path::new(&cfg.gridworld.map).is_relative() {
            cfg.gridworld.map = base.join(&cfg.gridworld.map).to_string_lossy().into_owned();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(b) = o.beta {
            self.beta = b;
            self.gridworld.beta = Some(b);
        }
        if let Some(r) = &o.ratios {
            self.sweep.ratios = r.clone();
        }
        if let Some(k) = o.k {
            self.em.k = k;
        }
        if let Some(r) = o.restarts {
            self.em.restarts = r;
        }
        if let Some(m) = &o.map {
            self.gridworld.map = m.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::config("beta", "must be positive and finite"));
        }
        let world = self.world()?;
        if self.population.groups.is_empty() {
            return Err(Error::config("population.groups", "at least one group is required"));
        }
        for (i, g) in self.population.groups.iter().enumerate() {
            if g.phi.len() != world.dim() {
                return Err(Error::config(
                    format!("population.groups[{i}].phi"),
                    format!("has {} components, world dimension is {}", g.phi.len(), world.dim()),
                ));
            }
            if g.annotators == 0 {
                return Err(Error::config(format!("population.groups[{i}].annotators"), "must be at least 1"));
            }
        }
        let with_eta = self.population.groups.iter().filter(|g| g.eta.is_some()).count();
        if with_eta != 0 && with_eta != self.population.groups.len() {
            return Err(Error::config("population.groups.eta", "give eta on every group or on none"));
        }
        if self.sampling.comparisons == 0 {
            return Err(Error::config("sampling.comparisons", "must be at least 1"));
        }
        self.fit.to_fit_config().validate()?;
        if self.em.k == 0 {
            return Err(Error::config("em.k", "must be at least 1"));
        }
        if self.em.restarts == 0 {
            return Err(Error::config("em.restarts", "must be at least 1"));
        }
        if self.em.max_iters == 0 {
            return Err(Error::config("em.max_iters", "must be at least 1"));
        }
        self.maxmin.to_maxmin_config().validate()?;
        if self.sweep.ratios.is_empty() || self.sweep.ratios.contains(&0) {
            return Err(Error::config("sweep.ratios", "must be a nonempty list of positive integers"));
        }
        if self.sweep.seeds == 0 || self.sweep.annotators_base == 0 || self.sweep.comparisons == 0 {
            return Err(Error::config("sweep", "seeds, annotators_base and comparisons must be positive"));
        }
        if self.sweep.instance == SweepInstance::Config && self.population.groups.len() < 2 {
            return Err(Error::config("sweep.instance", "`config` needs at least two population groups"));
        }
        if let Some(b) = self.gridworld.beta {
            if !(b > 0.0) {
                return Err(Error::config("gridworld.beta", "must be positive"));
            }
        }
        if !(self.gridworld.tol > 0.0) {
            return Err(Error::config("gridworld.tol", "must be positive"));
        }
        if self.gridworld.map != "default" && !Path::new(&self.gridworld.map).exists() {
            return Err(Error::config("gridworld.map", format!("file {} not found", self.gridworld.map)));
        }
        Ok(())
    }

    pub fn world(&self) -> Result<FeatureWorld> {
        match &self.world {
            WorldSpec::File { file } => {
                let text = fs::read_to_string(file)
                    .map_err(|e| Error::config("world.file", format!("{}: {e}", file.display())))?;
                FeatureWorld::from_json(&text).map_err(|e| Error::config("world.file", e.to_string()))
            }
            WorldSpec::Inline { dim, prompts } => {
                FeatureWorld::new(*dim, prompts.clone()).map_err(|e| Error::config("world", e.to_string()))
            }
        }
    }

    pub fn population(&self) -> Result<Population> {
        let world = self.world()?;
        let groups = &self.population.groups;
        let pop = if groups.iter().all(|g| g.eta.is_some()) {
            Population::new(
                world,
                groups
                    .iter()
                    .enumerate()
                    .map(|(i, g)| GroupSpec {
                        group_id: i,
                        phi_star: RewardParams(g.phi.clone()),
                        eta: g.eta.unwrap_or_default(),
                        annotator_count: g.annotators,
                    })
                    .collect(),
            )
        } else {
            Population::from_counts(world, groups.iter().map(|g| (RewardParams(g.phi.clone()), g.annotators)).collect())
        };
        pop.map_err(|e| Error::config("population", e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, with the world file inlined and
    /// the output directory left out.
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.out = None;
        if let WorldSpec::File { .. } = canon.world {
            let w = self.world()?;
            canon.world = WorldSpec::Inline {
                dim: w.dim(),
                prompts: w.prompts().to_vec(),
            };
        }
        let mut v = serde_json::to_value(&canon)?;
        if canon.gridworld.map != "default" {
            let text = fs::read_to_string(&canon.gridworld.map)?;
            v["gridworld"]["map"] = serde_json::Value::String(text);
        }
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&v)?)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
    /// Only field that differs between identical runs.
    pub wall_time_seconds: f64,
}

struct Out {
    dir: PathBuf,
    files: Vec<String>,
}

impl Out {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// Runs one command into `out_dir` and returns the manifest it wrote.
pub fn run_experiment(config: &ExperimentConfig, command: Command, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(out_dir)?;
    let mut out = Out {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let stage = command.name();
    match command {
        Command::Gen => gen(config, &mut out),
        Command::FitSingle => fit_single(config, &mut out),
        Command::FitMixture => fit_mixture(config, &mut out),
        Command::AlignSingle => align_single(config, &mut out),
        Command::AlignMaxmin => align_maxmin(config, &mut out),
        Command::VerifyBounds => verify_bounds(config, &mut out),
        Command::Sweep => sweep(config, &mut out),
        Command::Gridworld => gridworld(config, &mut out),
    }
    .map_err(|e| e.in_stage(stage))?;
    out.files.sort();
    let manifest = Manifest {
        command: stage.into(),
        config_hash: config.hash()?,
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        outputs: out.files.clone(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    out.json("manifest.json", &manifest)?;
    Ok(manifest)
}

const RECORDS: &str = "records.jsonl";
const LABELS: &str = "labels.jsonl";
const FIT_SINGLE: &str = "fit_single.json";

/// Records and hidden labels: from the output directory if `gen` ran there,
/// otherwise sampled afresh.
fn dataset(config: &ExperimentConfig, out: &Out) -> Result<(Population, Vec<PreferenceRecord>, HiddenLabels)> {
    let pop = config.population()?;
    let (rp, lp) = (out.path(RECORDS), out.path(LABELS));
    if rp.exists() && lp.exists() {
        let records = read_records_jsonl(BufReader::new(fs::File::open(rp)?), pop.world())?;
        let labels = HiddenLabels::read_jsonl(BufReader::new(fs::File::open(lp)?))?;
        return Ok((pop, records, labels));
    }
    let ds = sample_dataset(&pop, config.sampling.comparisons, config.seed)?;
    Ok((pop, ds.records().to_vec(), ds.hidden_labels().clone()))
}

fn gen(config: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let pop = config.population()?;
    let ds = sample_dataset(&pop, config.sampling.comparisons, config.seed)?;
    let mut buf = Vec::new();
    write_records_jsonl(ds.records(), pop.world(), &mut buf)?;
    out.write(RECORDS, &String::from_utf8(buf).expect("jsonl is utf-8"))?;
    let mut buf = Vec::new();
    ds.hidden_labels().write_jsonl(&mut buf)?;
    out.write(LABELS, &String::from_utf8(buf).expect("jsonl is utf-8"))?;
    let mut world = pop.world().to_json()?;
    world.push('\n');
    out.write("world.json", &world)?;
    out.json("population.json", &pop.groups())
}

#[derive(Serialize, Deserialize)]
struct FitSingleDoc {
    phi: RewardParams,
    train_accuracy: f64,
    group_accuracy: Vec<f64>,
}

fn records_of(records: &[PreferenceRecord], labels: &HiddenLabels, g: usize) -> Vec<PreferenceRecord> {
    records
        .iter()
        .filter(|r| labels.get(r.annotator_id) == Some(g))
        .copied()
        .collect()
}

fn fit_single(config: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let (pop, records, labels) = dataset(config, out)?;
    let world = pop.world();
    let phi = fit_single_reward(&records, world, &config.fit.to_fit_config())?;
    let group_accuracy = (0..pop.num_groups())
        .map(|g| {
            let rs = records_of(&records, &labels, g);
            if rs.is_empty() {
                Ok(f64::NAN)
            } else {
                prediction_accuracy(&phi, &rs, world)
            }
        })
        .collect::<Result<_>>()?;
    out.json(
        FIT_SINGLE,
        &FitSingleDoc {
            train_accuracy: prediction_accuracy(&phi, &records, world)?,
            phi,
            group_accuracy,
        },
    )
}

fn em_config(config: &ExperimentConfig) -> FitConfig {
    FitConfig {
        max_iters: config.em.max_iters,
        ..config.fit.to_fit_config()
    }
}

fn fit_mixture(config: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let (pop, records, labels) = dataset(config, out)?;
    let model = em_fit(&records, pop.world(), config.em.k, &em_config(config), config.em.restarts, config.seed)?;
    let cluster_accuracy = cluster_accuracy(&model, &labels).ok();
    out.json("mixture.json", &MixtureDoc { cluster_accuracy, model })
}

#[derive(Serialize)]
struct MixtureDoc {
    cluster_accuracy: Option<f64>,
    model: crate::reward::MixtureRewardModel,
}

fn single_phi(config: &ExperimentConfig, out: &Out) -> Result<RewardParams> {
    let p = out.path(FIT_SINGLE);
    if p.exists() {
        let doc: FitSingleDoc = serde_json::from_str(&fs::read_to_string(p)?)?;
        return Ok(doc.phi);
    }
    let (pop, records, _) = dataset(config, out)?;
    fit_single_reward(&records, pop.world(), &config.fit.to_fit_config())
}

fn align_single(config: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let pop = config.population()?;
    let world = pop.world();
    let phi = single_phi(config, out)?;
    phi.check_dim(world)?;
    let reference = Policy::uniform(world);
    let pi = gibbs_policy(&phi, &reference, config.beta, world)?;
    let groups = (0..pop.num_groups())
        .map(|u| {
            let obj = regularized_objective(&pi, &pop.group(u)?.phi_star, &reference, config.beta, world)?;
            Ok(serde_json::json!({
                "group": u,
                "objective": obj.value,
                "expected_reward": obj.expected_reward,
                "kl": obj.kl,
                "align_gap": align_gap(&pi, u, &pop, &reference, config.beta)?,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let (worst, g) = min_group_objective(&pi, &pop, &reference, config.beta)?;
    out.json(
        "align_single.json",
        &serde_json::json!({
            "beta": config.beta,
            "phi": phi,
            "policy": serde_json::from_str::<serde_json::Value>(&pi.to_json(world)?)?,
            "groups": groups,
            "worst_group": worst,
            "min_group_objective": g,
        }),
    )
}

fn maxmin_population(config: &ExperimentConfig, out: &Out) -> Result<Population> {
    let pop = config.population()?;
    match config.maxmin.rewards {
        RewardSource::True => Ok(pop),
        RewardSource::Learned => {
            let (pop, records, _) = dataset(config, out)?;
            let model = em_fit(&records, pop.world(), config.em.k, &em_config(config), config.em.restarts, config.seed)?;
            let mut sizes = vec![0usize; model.k];
            for &c in model.assignment.values() {
                sizes[c] += 1;
            }
            Population::from_counts(
                pop.world().clone(),
                model
                    .cluster_params
                    .into_iter()
                    .zip(sizes)
                    .filter(|(_, n)| *n > 0)
                    .collect(),
            )
        }
    }
}

fn align_maxmin(config: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let pop = maxmin_population(config, out)?;
    let world = pop.world();
    let reference = Policy::uniform(world);
    let run = solve_maxmin(&pop, &reference, config.beta, &config.maxmin.to_maxmin_config())?;
    let mut summary = serde_json::Map::new();
    summary.insert("beta".into(), config.beta.into());
    if let Some(r) = &run.iterate {
        out.write("maxmin_iterate.json", &(r.to_json(world)? + "\n"))?;
        summary.insert("objective_iterate".into(), r.objective.into());
    }
    if let Some(r) = &run.dual {
        out.write("maxmin_dual.json", &(r.to_json(world)? + "\n"))?;
        summary.insert("objective_dual".into(), r.objective.into());
        summary.insert("lambda".into(), serde_json::json!(r.lambda));
        summary.insert("duality_gap".into(), serde_json::json!(r.duality_gap));
    }
    if let (Some(a), Some(b)) = (&run.iterate, &run.dual) {
        summary.insert("solver_disagreement".into(), (a.objective - b.objective).abs().into());
    }
    out.json("maxmin_summary.json", &summary)
}

fn verify_bounds(config: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let pop = config.population()?;
    let fit = config.fit.to_fit_config();
    let lemma = verify_lemma1(&pop, &fit)?;
    let theorem = verify_theorem1(&pop, config.beta, &fit)?;
    let spec = RandomInstanceSpec::default();
    let (mut applicable, mut l_stated, mut t_stated, mut t_proof) = (0usize, 0usize, 0usize, 0usize);
    let mut lemma_applicable = 0usize;
    for i in 0..config.bounds.random_instances as u64 {
        let rp = random_population(&spec, config.seed, i)?;
        let l = verify_lemma1(&rp, &fit)?;
        if l.status == crate::analysis::BoundStatus::Applicable {
            lemma_applicable += 1;
            l_stated += usize::from(l.holds_stated());
        }
        let t = verify_theorem1(&rp, config.beta, &fit)?;
        if t.status == crate::analysis::BoundStatus::Applicable {
            applicable += 1;
            t_stated += usize::from(t.holds_stated());
            t_proof += usize::from(t.holds_proof());
        }
    }
    out.json(
        "bounds.json",
        &serde_json::json!({
            "beta": config.beta,
            "lemma1": lemma.to_json_value(),
            "theorem1": theorem.to_json_value(),
            "random": {
                "instances": config.bounds.random_instances,
                "lemma1_applicable": lemma_applicable,
                "lemma1_holds": l_stated,
                "theorem1_applicable": applicable,
                "theorem1_holds_stated": t_stated,
                "theorem1_holds_proof": t_proof,
            },
        }),
    )
}

fn sweep(config: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let (world, params) = match config.sweep.instance {
        SweepInstance::Default => sweep_instance(),
        SweepInstance::Config => {
            let g = &config.population.groups;
            (config.world()?, [RewardParams(g[0].phi.clone()), RewardParams(g[1].phi.clone())])
        }
    };
    let sc = SweepConfig {
        ratios: config.sweep.ratios.clone(),
        annotators_base: config.sweep.annotators_base,
        comparisons: config.sweep.comparisons,
        seeds: (0..config.sweep.seeds as u64).map(|i| config.seed + i).collect(),
        fit: config.fit.to_fit_config(),
        beta: config.beta,
        maxmin: config.maxmin.to_maxmin_config(),
    };
    let rows = minority_sweep(&world, &params, &sc)?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    out.write("sweep.csv", &String::from_utf8(buf).expect("csv is utf-8"))?;
    out.json("sweep_summary.json", &summarize_sweep(&rows))
}

fn gridworld(config: &ExperimentConfig, out: &mut Out) -> Result<()> {
    let map = if config.gridworld.map == "default" {
        GridMap::default_map()
    } else {
        GridMap::parse(&fs::read_to_string(&config.gridworld.map)?)?
    };
    let beta = config.gridworld.beta.unwrap_or(map.beta);
    let refa = uniform_actions();
    let grid = &map.grid;
    let mut groups = Vec::new();
    for (u, name) in map.group_names.iter().enumerate() {
        let sol = soft_value_iteration(grid, &map.rewards[u], beta, &refa, 1e-12)?;
        let path = rollout(grid, &sol.policy, config.seed, grid.max_horizon())?;
        out.write(&format!("trajectory_{name}.json"), &(trajectory_to_json(&path) + "\n"))?;
        groups.push(serde_json::json!({
            "group": name,
            "start_value": sol.value_at(grid, grid.start())?,
            "regions_visited": crate::gridworld::regions_visited(grid, &path),
        }));
    }
    let mm = grid_maxmin(grid, &map.rewards, beta, &refa, config.gridworld.tol)?;
    let path = rollout(grid, &mm.solution.policy, config.seed, grid.max_horizon())?;
    out.write("trajectory_maxmin.json", &(trajectory_to_json(&path) + "\n"))?;
    out.json(
        "gridworld.json",
        &serde_json::json!({
            "beta": beta,
            "discount": grid.discount(),
            "groups": groups,
            "maxmin": {
                "lambda": mm.lambda,
                "returns": mm.returns,
                "dual_value": mm.dual_value,
                "primal_value": mm.primal_value,
                "duality_gap": mm.duality_gap,
                "regions_visited": crate::gridworld::regions_visited(grid, &path),
            },
        }),
    )
}

/// Process exit code for an error: 2 for config errors, 3 for
/// non-convergence, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::NonConvergence { .. } => 3,
        _ => 1,
    }
}

/// Writes the config back out as TOML, e.g. for archiving alongside results.
pub fn write_config<W: Write>(config: &ExperimentConfig, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(config.to_toml()?.as_bytes())?;
    w.flush()?;
    Ok(())
}
