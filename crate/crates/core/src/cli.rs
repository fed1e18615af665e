//! The `riskimit` command line: configuration, overrides and the commands.
//!
//! A run is configured by a TOML file with the sections `env`, `algo`,
//! `risk`, `optimizer`, `expert`, `run` and `verify`. Unknown keys are
//! rejected. Flags of the form `--section.key value` override file values;
//! `RISKIMIT_SEED` overrides `run.seed` from the file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::costnoise::{fit_kmeans, state_action_pairs, ClusterModel, NoiseStyle, NoisyCostEnv, DEFAULT_CLUSTERS};
use crate::env::{read_dataset, write_dataset, CartPole, CostAtom, Environment, Pendulum, TabularMdp, Trajectory};
use crate::error::{Error, Result};
use crate::expert::{exact_tabular_expert, generate_expert_dataset, tabular_checksum, train_cvar_expert, ExpertConfig, POLICY_SEARCH_LIMIT};
use crate::fixtures::{self, GridSpec};
use crate::harness::{
    aggregate, emit_report, evaluate_batched, evaluate_policy, read_training_log, write_curves, write_training_log, AggregationMode, LogHeader,
    ReportFormat, RunRecord,
};
use crate::imitation::{train, ImitationAlgo, KlStepConfig, PolicyOptimizer, Variant};
use crate::nn::{Checkpoint, Mlp};
use crate::policy::{CategoricalPolicy, Policy, TabularPolicy};
use crate::risk::{RiskConfig, RiskSummary};
use crate::rng::{derive_seed, seeded};
use crate::verify::{self, SuiteReport};

pub const SEED_ENV_VAR: &str = "RISKIMIT_SEED";

const EXPERT_TAG: u64 = 10;
const DATASET_TAG: u64 = 11;
const NOISE_TAG: u64 = 12;
const RUN_TAG: u64 = 13;
const EVAL_TAG: u64 = 14;
const BATCHED_EVAL_TAG: u64 = 15;
/// Batches behind the expert reference written by `evaluate`.
const REFERENCE_BATCHES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Gridworld,
    Cartpole,
    Pendulum,
    Bandit,
    TwoState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub name: EnvKind,
    /// Defaults to 8 for the gridworld and 200 for the control tasks.
    pub horizon: Option<usize>,
    pub gamma: Option<f64>,
    /// Gridworld only.
    pub layout: Option<Vec<String>>,
    pub slip: f64,
    pub safe_cost: f64,
    pub risky_cost: f64,
    pub risky_probability: f64,
    /// Pass the costs through the fitted cluster-noise model.
    pub noise: bool,
    pub noise_style: NoiseStyle,
    pub noise_clusters: usize,
    pub noise_max_iters: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            name: EnvKind::Gridworld,
            horizon: None,
            gamma: None,
            layout: None,
            slip: 0.1,
            safe_cost: 1.0,
            risky_cost: 10.0,
            risky_probability: 0.1,
            noise: false,
            noise_style: NoiseStyle::HopperStyle,
            noise_clusters: DEFAULT_CLUSTERS,
            noise_max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoSection {
    pub variant: Variant,
    pub entropy_weight: f64,
    pub policy_optimizer: PolicyOptimizer,
    /// Defaults to 3 for GAIL and 1 otherwise.
    pub generator_steps: Option<usize>,
    pub discriminator_steps: usize,
    pub pretrain_iters: usize,
    pub batch_size: usize,
    pub baseline: bool,
    pub policy_hidden: Vec<usize>,
    /// Defaults to 64-64-32 for the Wasserstein critic and 32-32 otherwise.
    pub disc_hidden: Option<Vec<usize>>,
    pub clip_bound: f64,
    /// What the imitation policy observes.
    pub policy_view: PolicyView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyView {
    Full,
    /// Gridworld only: the column of the current cell.
    Column,
}

impl Default for AlgoSection {
    fn default() -> Self {
        let base = ImitationAlgo::new(Variant::JsRsGail, RiskConfig { alpha: 0.3, lambda: 0.5, gamma: 0.99 });
        Self {
            variant: Variant::JsRsGail,
            entropy_weight: base.entropy_weight,
            policy_optimizer: base.policy_optimizer,
            generator_steps: None,
            discriminator_steps: base.discriminator_steps,
            pretrain_iters: base.pretrain_iters,
            batch_size: base.batch_size,
            baseline: base.baseline,
            policy_hidden: base.policy_hidden,
            disc_hidden: None,
            clip_bound: base.clip_bound,
            policy_view: PolicyView::Full,
        }
    }
}

/// A single `lambda` or a grid, one training run per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    One(f64),
    Many(Vec<f64>),
}

impl LambdaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaGrid::One(l) => vec![*l],
            LambdaGrid::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    pub alpha: f64,
    pub lambda: LambdaGrid,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self { alpha: 0.3, lambda: LambdaGrid::One(0.5) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub policy_lr: f64,
    pub disc_lr: f64,
    pub max_kl: f64,
    pub cg_iters: usize,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub damping: f64,
    pub fisher_states: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let kl = KlStepConfig::default();
        Self {
            policy_lr: 1e-3,
            disc_lr: 1e-3,
            max_kl: kl.max_kl,
            cg_iters: kl.cg_iters,
            backtrack: kl.backtrack,
            max_backtracks: kl.max_backtracks,
            damping: kl.damping,
            fisher_states: kl.fisher_states,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertMethod {
    /// Exhaustive search when the environment is tabular and small enough.
    Auto,
    Exact,
    Reinforce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertSection {
    pub method: ExpertMethod,
    pub iterations: usize,
    /// `alpha` and `lambda` of the expert's own objective; default to `risk.alpha`
    /// and the first `risk.lambda`.
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub baseline: bool,
    pub entropy_weight: f64,
    pub eval_every: usize,
    pub eval_trajectories: usize,
    /// Trajectories written by `gen-dataset`.
    pub dataset_size: usize,
}

impl Default for ExpertSection {
    fn default() -> Self {
        let e = ExpertConfig::default();
        Self {
            method: ExpertMethod::Auto,
            iterations: 300,
            alpha: None,
            lambda: None,
            hidden: e.hidden,
            batch_size: e.batch_size,
            lr: e.lr,
            baseline: e.baseline,
            entropy_weight: e.entropy_weight,
            eval_every: e.eval_every,
            eval_trajectories: e.eval_trajectories,
            dataset_size: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Independent training runs per `lambda`, seeded from `seed`.
    pub num_seeds: usize,
    pub iterations: usize,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/expert.json`.
    pub expert_path: Option<PathBuf>,
    /// Defaults to `<out_dir>/expert_data.jsonl`.
    pub dataset_path: Option<PathBuf>,
    /// Defaults to `<out_dir>/noise.json`.
    pub noise_model_path: Option<PathBuf>,
    pub eval_trajectories: usize,
    pub aggregation: AggregationMode,
    pub k: usize,
    pub m: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            num_seeds: 1,
            iterations: 300,
            out_dir: PathBuf::from("runs"),
            expert_path: None,
            dataset_path: None,
            noise_model_path: None,
            eval_trajectories: 300,
            aggregation: AggregationMode::LastK,
            k: 100,
            m: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub batches: usize,
    pub gradient_fixtures: usize,
    pub unbiasedness_samples: usize,
    pub occupancy_policies: usize,
    pub collapse_iterations: usize,
    pub clipping_iterations: usize,
    pub risk_tol: f64,
    pub coherence_tol: f64,
    pub gradient_tol: f64,
    pub occupancy_tol: f64,
    pub collapse_tol: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            batches: 1000,
            gradient_fixtures: 100,
            unbiasedness_samples: 1_000_000,
            occupancy_policies: 20,
            collapse_iterations: 50,
            clipping_iterations: 50,
            risk_tol: 1e-9,
            coherence_tol: 1e-10,
            gradient_tol: 1e-4,
            occupancy_tol: 1e-8,
            collapse_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub env: EnvSection,
    pub algo: AlgoSection,
    pub risk: RiskSection,
    pub optimizer: OptimizerSection,
    pub expert: ExpertSection,
    pub run: RunSection,
    pub verify: VerifySection,
}

/// Parses a `--section.key value` override value as TOML, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut table) => table.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key = value` pairs on top of a parsed TOML document.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[(String, String)]) -> Result<()> {
    for (key, raw) in overrides {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().filter(|_| !parts.is_empty()).ok_or_else(|| Error::Config(format!("override '{key}' must look like section.key")))?;
        let mut table = &mut *doc;
        for part in parts {
            table = table
                .entry(part)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override '{key}': '{part}' is not a section")))?;
        }
        table.insert(last.to_string(), parse_override_value(raw));
    }
    Ok(())
}

/// File, then `RISKIMIT_SEED`, then explicit overrides.
pub fn resolve_config(path: Option<&Path>, overrides: &[(String, String)], seed_env: Option<&str>) -> Result<Config> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let mut all = Vec::new();
    if let Some(seed) = seed_env {
        seed.trim().parse::<u64>().map_err(|_| Error::Config(format!("{SEED_ENV_VAR}='{seed}' is not an unsigned integer")))?;
        all.push(("run.seed".to_string(), seed.trim().to_string()));
    }
    all.extend_from_slice(overrides);
    apply_overrides(&mut doc, &all)?;
    let config: Config = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.risk.lambda.values().is_empty() {
            return Err(Error::Config("risk.lambda must hold at least one value".into()));
        }
        for lambda in self.risk.lambda.values() {
            self.algo_for(lambda)?.validate()?;
        }
        if self.run.num_seeds == 0 {
            return Err(Error::Config("run.num_seeds must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn horizon(&self) -> usize {
        self.env.horizon.unwrap_or(match self.env.name {
            EnvKind::Gridworld => GridSpec::default().horizon,
            EnvKind::Cartpole | EnvKind::Pendulum => 200,
            EnvKind::Bandit => 1,
            EnvKind::TwoState => 3,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.env.gamma.unwrap_or(match self.env.name {
            EnvKind::Gridworld | EnvKind::Cartpole | EnvKind::Pendulum => 0.99,
            EnvKind::Bandit | EnvKind::TwoState => 0.9,
        })
    }

    pub fn risk_config(&self, lambda: f64) -> Result<RiskConfig> {
        Ok(RiskConfig::new(self.risk.alpha, lambda, self.gamma())?)
    }

    pub fn algo_for(&self, lambda: f64) -> Result<ImitationAlgo> {
        let a = &self.algo;
        let o = &self.optimizer;
        let mut algo = ImitationAlgo::new(a.variant, self.risk_config(lambda)?);
        algo.entropy_weight = a.entropy_weight;
        algo.policy_optimizer = a.policy_optimizer;
        if let Some(g) = a.generator_steps {
            algo.generator_steps = g;
        }
        algo.discriminator_steps = a.discriminator_steps;
        algo.pretrain_iters = a.pretrain_iters;
        algo.batch_size = a.batch_size;
        algo.baseline = a.baseline;
        algo.policy_hidden = a.policy_hidden.clone();
        if let Some(h) = &a.disc_hidden {
            algo.disc_hidden = h.clone();
        }
        algo.clip_bound = a.clip_bound;
        algo.policy_view = self.policy_view()?;
        algo.policy_lr = o.policy_lr;
        algo.disc_lr = o.disc_lr;
        algo.kl = KlStepConfig {
            max_kl: o.max_kl,
            cg_iters: o.cg_iters,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
            damping: o.damping,
            fisher_states: o.fisher_states,
        };
        Ok(algo)
    }

    pub fn expert_config(&self) -> ExpertConfig {
        let e = &self.expert;
        ExpertConfig {
            hidden: e.hidden.clone(),
            batch_size: e.batch_size,
            lr: e.lr,
            baseline: e.baseline,
            entropy_weight: e.entropy_weight,
            eval_every: e.eval_every,
            eval_trajectories: e.eval_trajectories,
        }
    }

    pub fn expert_risk(&self) -> Result<RiskConfig> {
        let lambda = self.expert.lambda.unwrap_or(self.risk.lambda.values()[0]);
        Ok(RiskConfig::new(self.expert.alpha.unwrap_or(self.risk.alpha), lambda, self.gamma())?)
    }

    pub fn expert_path(&self) -> PathBuf {
        self.run.expert_path.clone().unwrap_or_else(|| self.run.out_dir.join("expert.json"))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.run.dataset_path.clone().unwrap_or_else(|| self.run.out_dir.join("expert_data.jsonl"))
    }

    pub fn noise_model_path(&self) -> PathBuf {
        self.run.noise_model_path.clone().unwrap_or_else(|| self.run.out_dir.join("noise.json"))
    }

    pub fn train_dir(&self) -> PathBuf {
        self.run.out_dir.join("train")
    }

    /// Label of one training run in logs and reports.
    pub fn run_label(&self, lambda: f64) -> String {
        if self.risk.lambda.values().len() > 1 {
            format!("{}-lambda{lambda}", self.algo.variant)
        } else {
            self.algo.variant.to_string()
        }
    }

    pub fn run_seed(&self, index: usize) -> u64 {
        derive_seed(derive_seed(self.run.seed, RUN_TAG), index as u64)
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            layout: self.env.layout.clone().unwrap_or_else(|| GridSpec::default().layout),
            safe_cost: self.env.safe_cost,
            risky: vec![
                CostAtom { value: 0.0, probability: 1.0 - self.env.risky_probability },
                CostAtom { value: self.env.risky_cost, probability: self.env.risky_probability },
            ],
            slip: self.env.slip,
            horizon: self.horizon(),
            gamma: self.gamma(),
        }
    }

    pub fn policy_view(&self) -> Result<Option<Vec<Vec<f64>>>> {
        match (self.algo.policy_view, self.env.name) {
            (PolicyView::Full, _) => Ok(None),
            (PolicyView::Column, EnvKind::Gridworld) => Ok(Some(fixtures::column_view(&self.grid_spec()))),
            (PolicyView::Column, other) => Err(Error::Config(format!("algo.policy_view = \"column\" needs the gridworld, not {other:?}"))),
        }
    }

    /// Loads a trained imitation policy with the configured view.
    pub fn load_policy(&self, path: &Path) -> Result<CategoricalPolicy> {
        let net = Mlp::from_checkpoint(&Checkpoint::load(path)?)?;
        Ok(match self.policy_view()? {
            Some(view) => CategoricalPolicy::with_view(net, view)?,
            None => CategoricalPolicy::new(net)?,
        })
    }

    /// The deterministic tabular environment, when `env.name` is tabular.
    pub fn tabular_env(&self) -> Option<TabularMdp> {
        match self.env.name {
            EnvKind::Gridworld => Some(fixtures::gridworld(&self.grid_spec())),
            EnvKind::Bandit => Some(fixtures::risky_bandit()),
            EnvKind::TwoState => Some(fixtures::two_state()),
            EnvKind::Cartpole | EnvKind::Pendulum => None,
        }
    }

    /// The environment without cost noise.
    pub fn base_env(&self) -> Result<Box<dyn Environment>> {
        if let Some(mdp) = self.tabular_env() {
            return Ok(Box::new(mdp));
        }
        Ok(match self.env.name {
            EnvKind::Cartpole => Box::new(CartPole::new(self.horizon(), self.gamma())?),
            _ => Box::new(Pendulum::new(self.horizon(), self.gamma())?),
        })
    }

    /// The environment whose costs define every statistic: the base
    /// environment, wrapped in the cost-noise model when `env.noise` is set.
    pub fn env(&self) -> Result<Box<dyn Environment>> {
        let base = self.base_env()?;
        if !self.env.noise {
            return Ok(base);
        }
        let path = self.noise_model_path();
        let model: Artifact<ClusterModel> = read_artifact(&path, "fit-noise")?;
        Ok(Box::new(NoisyCostEnv::new(base, model.payload, self.env.noise_style)?))
    }
}

/// A JSON artifact carrying the resolved configuration and master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config: serde_json::Value,
    pub seed: u64,
    pub payload: T,
}

impl<T> Artifact<T> {
    pub fn new(config: &Config, payload: T) -> Self {
        Self { config: config.to_json(), seed: config.run.seed, payload }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a JSON artifact; a missing file names the command that produces it.
pub fn read_artifact<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::Config(format!("missing input {} (run `{producer}` first)", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.into(), line: 1, source })
}

/// A trained expert: a network or a lookup table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExpertPolicy {
    Network { checkpoint: Checkpoint, evaluation: Option<RiskSummary> },
    Table { policy: TabularPolicy, scaled_rho: f64 },
}

impl ExpertPolicy {
    pub fn policy(&self) -> Result<Box<dyn Policy>> {
        Ok(match self {
            ExpertPolicy::Network { checkpoint, .. } => Box::new(CategoricalPolicy::new(Mlp::from_checkpoint(checkpoint)?)?),
            ExpertPolicy::Table { policy, .. } => Box::new(policy.clone()),
        })
    }

    pub fn checksum(&self) -> Result<String> {
        Ok(match self {
            ExpertPolicy::Network { checkpoint, .. } => Mlp::from_checkpoint(checkpoint)?.checksum(),
            ExpertPolicy::Table { policy, .. } => tabular_checksum(policy),
        })
    }
}

/// Final-policy statistics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationEntry {
    pub run: String,
    pub seed: u64,
    pub stats: RiskSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    TrainExpert,
    GenDataset,
    FitNoise,
    Train,
    Evaluate,
    Report,
    Verify,
}

#[derive(Debug, Parser)]
#[command(name = "riskimit", about = "Risk-sensitive adversarial imitation learning", version)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Shorthand for `--algo.variant`.
    #[arg(long)]
    pub algo: Option<Variant>,
    /// Rayon worker threads (results do not depend on this).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Splits `--section.key value` and `--section.key=value` tokens from the
/// arguments clap understands.
pub fn split_overrides<I: IntoIterator<Item = String>>(args: I) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        match arg.strip_prefix("--") {
            Some(flag) if flag.split('=').next().is_some_and(|k| k.contains('.')) => {
                if let Some((k, v)) = flag.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let value = it.next().ok_or_else(|| Error::Config(format!("override --{flag} needs a value")))?;
                    overrides.push((flag.to_string(), value));
                }
            }
            _ => plain.push(arg),
        }
    }
    Ok((plain, overrides))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

/// 1 for usage and configuration problems, 2 for divergence.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } => 2,
        _ => 1,
    }
}

/// Runs one command with an already resolved configuration.
pub fn execute(command: Command, config: &Config) -> Result<Outcome> {
    match command {
        Command::TrainExpert => train_expert(config),
        Command::GenDataset => gen_dataset(config),
        Command::FitNoise => fit_noise(config),
        Command::Train => train_runs(config),
        Command::Evaluate => evaluate(config),
        Command::Report => report(config),
        Command::Verify => return run_verify(config),
    }
    .map(|()| Outcome::Success)
}

fn train_expert(config: &Config) -> Result<()> {
    let cfg = config.expert_risk()?;
    let path = config.expert_path();
    let tabular = config.tabular_env().filter(|_| !config.env.noise);
    let exact_ok = tabular.as_ref().is_some_and(|m| (m.action_count() as f64).powi(m.state_count() as i32) <= POLICY_SEARCH_LIMIT);
    let use_exact = match config.expert.method {
        ExpertMethod::Exact if !exact_ok => {
            return Err(Error::Config("expert.method = \"exact\" needs a small tabular environment without cost noise".into()))
        }
        ExpertMethod::Exact => true,
        ExpertMethod::Auto => exact_ok,
        ExpertMethod::Reinforce => false,
    };
    let expert = if use_exact {
        let mdp = tabular.expect("checked above");
        let (policy, scaled_rho) = exact_tabular_expert(&mdp, &cfg)?;
        println!("exact expert: (1 + lambda) rho = {scaled_rho:.6}");
        ExpertPolicy::Table { policy, scaled_rho }
    } else {
        let env = config.env()?;
        let outcome = train_cvar_expert(&env, &cfg, config.expert.iterations, derive_seed(config.run.seed, EXPERT_TAG), &config.expert_config())?;
        println!(
            "expert from iteration {}: mean {:.4} cvar {:.4} rho {:.4}",
            outcome.best_iteration, outcome.best.mean, outcome.best.cvar_alpha, outcome.best.rho_lambda
        );
        let metadata = serde_json::json!({ "config": config.to_json(), "seed": config.run.seed });
        ExpertPolicy::Network { checkpoint: outcome.policy.net().to_checkpoint(Some(metadata)), evaluation: Some(outcome.best) }
    };
    write_json(&path, &Artifact::new(config, expert))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn gen_dataset(config: &Config) -> Result<()> {
    let expert: Artifact<ExpertPolicy> = read_artifact(&config.expert_path(), "train-expert")?;
    let policy = expert.payload.policy()?;
    let env = config.env()?;
    let (header, records) = generate_expert_dataset(
        &*policy,
        Some(expert.payload.checksum()?),
        &env,
        config.expert.dataset_size,
        derive_seed(config.run.seed, DATASET_TAG),
        Some(config.to_json()),
    )?;
    let path = config.dataset_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_dataset(&path, &header, &records)?;
    println!("wrote {} trajectories to {}", records.len(), path.display());
    Ok(())
}

fn load_expert_trajectories(config: &Config) -> Result<Vec<Trajectory>> {
    let path = config.dataset_path();
    if !path.exists() {
        return Err(Error::Config(format!("missing input {} (run `gen-dataset` first)", path.display())));
    }
    let (header, records) = read_dataset(&path)?;
    if let (Some(recorded), Ok(expert)) = (&header.policy_checksum, read_artifact::<Artifact<ExpertPolicy>>(&config.expert_path(), "train-expert")) {
        if expert.payload.checksum()? != *recorded {
            log::warn!("{} was generated by a different expert than {}", path.display(), config.expert_path().display());
        }
    }
    Ok(records.iter().map(|r| r.to_trajectory()).collect())
}

fn fit_noise(config: &Config) -> Result<()> {
    let trajs = load_expert_trajectories(config)?;
    let env = config.base_env()?;
    let pairs = state_action_pairs(&trajs);
    let mut rng = seeded(derive_seed(config.run.seed, NOISE_TAG));
    let model = fit_kmeans(&pairs, env.spec().action_count, config.env.noise_clusters, &mut rng, config.env.noise_max_iters)?;
    let path = config.noise_model_path();
    write_json(&path, &Artifact::new(config, model))?;
    println!("wrote {} clusters to {}", config.env.noise_clusters, path.display());
    Ok(())
}

fn run_stem(config: &Config, lambda: f64, index: usize) -> PathBuf {
    config.train_dir().join(format!("{}-seed{index}", config.run_label(lambda)))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_runs(config: &Config) -> Result<()> {
    let expert = load_expert_trajectories(config)?;
    let env = config.env()?;
    let dir = config.train_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for lambda in config.risk.lambda.values() {
        let algo = config.algo_for(lambda)?;
        for index in 0..config.run.num_seeds {
            let seed = config.run_seed(index);
            let label = config.run_label(lambda);
            println!("training {label} seed {index} for {} iterations", config.run.iterations);
            let outcome = train(&algo, &env, &expert, config.run.iterations, seed)?;
            let stem = run_stem(config, lambda, index);
            let header = LogHeader { algo: label.clone(), seed, config: config.to_json() };
            write_training_log(&with_suffix(&stem, ".jsonl"), &header, &outcome.log)?;
            let stats: Vec<RiskSummary> = RunRecord::from_log(&label, seed, &outcome.log).stats;
            write_curves(&with_suffix(&stem, ".curves.csv"), &stats)?;
            let metadata = serde_json::json!({ "config": config.to_json(), "seed": seed, "algo": label });
            outcome.policy.net().to_checkpoint(Some(metadata.clone())).save(&with_suffix(&stem, ".policy.json"))?;
            outcome.discriminator.to_checkpoint(Some(metadata)).save(&with_suffix(&stem, ".disc.json"))?;
            if let Some(last) = outcome.log.last() {
                println!("  final batch: mean {:.4} cvar {:.4} rho {:.4}", last.mean, last.cvar_alpha, last.rho_lambda);
            }
        }
    }
    Ok(())
}

fn evaluate(config: &Config) -> Result<()> {
    let env = config.env()?;
    let mut entries = Vec::new();
    for lambda in config.risk.lambda.values() {
        let cfg = config.risk_config(lambda)?;
        for index in 0..config.run.num_seeds {
            let path = with_suffix(&run_stem(config, lambda, index), ".policy.json");
            if !path.exists() {
                return Err(Error::Config(format!("missing input {} (run `train` first)", path.display())));
            }
            let policy = config.load_policy(&path)?;
            let seed = derive_seed(config.run_seed(index), EVAL_TAG);
            let stats = evaluate_policy(&policy, &env, config.run.eval_trajectories, &cfg, seed)?;
            println!("{} seed {index}: mean {:.4} var {:.4} cvar {:.4} rho {:.4}", config.run_label(lambda), stats.mean, stats.var_alpha, stats.cvar_alpha, stats.rho_lambda);
            entries.push(EvaluationEntry { run: config.run_label(lambda), seed, stats });
        }
    }
    if let Ok(expert) = read_artifact::<Artifact<ExpertPolicy>>(&config.expert_path(), "train-expert") {
        let cfg = config.risk_config(config.risk.lambda.values()[0])?;
        let stats = evaluate_policy(&*expert.payload.policy()?, &env, config.run.eval_trajectories, &cfg, derive_seed(config.run.seed, EVAL_TAG))?;
        println!("expert: mean {:.4} var {:.4} cvar {:.4} rho {:.4}", stats.mean, stats.var_alpha, stats.cvar_alpha, stats.rho_lambda);
        entries.push(EvaluationEntry { run: "expert".into(), seed: config.run.seed, stats });
        // same batch size and window as the training-log aggregation
        let seed = derive_seed(config.run.seed, BATCHED_EVAL_TAG);
        let stats = evaluate_batched(&*expert.payload.policy()?, &env, config.algo.batch_size, REFERENCE_BATCHES, &cfg, seed)?;
        println!("expert (batched): mean {:.4} var {:.4} cvar {:.4} rho {:.4}", stats.mean, stats.var_alpha, stats.cvar_alpha, stats.rho_lambda);
        entries.push(EvaluationEntry { run: "expert-batched".into(), seed, stats });
    }
    let path = config.run.out_dir.join(format!("evaluation-{}.json", config.algo.variant));
    write_json(&path, &Artifact::new(config, entries))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn report(config: &Config) -> Result<()> {
    let dir = config.train_dir();
    let mut logs: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "jsonl")).collect(),
        Err(_) => Vec::new(),
    };
    if logs.is_empty() {
        return Err(Error::Config(format!("missing input: no training logs in {} (run `train` first)", dir.display())));
    }
    logs.sort();
    let mut runs = Vec::new();
    for path in &logs {
        let (header, log) = read_training_log(path)?;
        runs.push(RunRecord::from_log(&header.algo, header.seed, &log));
    }
    let report = aggregate(&runs, config.run.aggregation, config.run.k, config.run.m)?;
    for row in &report.rows {
        println!("{:<24} {:<10} {:>12.5} +- {:.5}", row.algo, row.criterion, row.estimate, row.ci_halfwidth);
    }
    let json = config.run.out_dir.join("report.json");
    let csv = config.run.out_dir.join("report.csv");
    emit_report(&report, ReportFormat::Json, &json, &config.to_json(), config.run.seed)?;
    emit_report(&report, ReportFormat::Csv, &csv, &config.to_json(), config.run.seed)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn run_verify(config: &Config) -> Result<Outcome> {
    let v = &config.verify;
    let seed = config.run.seed;
    let suites: Vec<Box<dyn Fn() -> Result<SuiteReport>>> = vec![
        Box::new(|| verify::risk_oracle_suite(v.batches, seed, v.risk_tol)),
        Box::new(|| verify::coherence_suite(v.batches, seed, v.coherence_tol)),
        Box::new(|| verify::gradient_suite(v.gradient_fixtures, derive_seed(seed, 1), v.gradient_tol)),
        Box::new(|| verify::unbiasedness_suite(v.unbiasedness_samples, derive_seed(seed, 2))),
        Box::new(|| verify::occupancy_suite(v.occupancy_policies, derive_seed(seed, 3), v.occupancy_tol)),
        Box::new(|| verify::collapse_suite(v.collapse_iterations, derive_seed(seed, 4), v.collapse_tol)),
        Box::new(|| verify::clipping_suite(v.clipping_iterations, derive_seed(seed, 5))),
    ];
    let mut all_passed = true;
    for suite in suites {
        let report = suite()?;
        println!("{}", report.line());
        all_passed &= report.passed;
    }
    Ok(if all_passed { Outcome::Success } else { Outcome::VerificationFailed })
}

/// Parses the command line (without the program name), prints the resolved
/// configuration and runs the command.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> Result<Outcome> {
    let (plain, mut overrides) = split_overrides(args)?;
    let args = Args::try_parse_from(std::iter::once("riskimit".to_string()).chain(plain)).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(variant) = args.algo {
        overrides.push(("algo.variant".into(), format!("\"{variant}\"")));
    }
    let seed_env = std::env::var(SEED_ENV_VAR).ok();
    let config = resolve_config(args.config.as_deref(), &overrides, seed_env.as_deref())?;
    println!("# resolved configuration\n{}", config.to_toml());
    match args.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| execute(args.command, &config))
        }
        None => execute(args.command, &config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn overrides_take_precedence_and_parse_types() {
        let config = resolve_config(None, &pairs(&[("risk.alpha", "0.2"), ("risk.lambda", "[0, 0.5]"), ("algo.variant", "rail")]), Some("7")).unwrap();
        assert_eq!(config.risk.alpha, 0.2);
        assert_eq!(config.risk.lambda.values(), vec![0.0, 0.5]);
        assert_eq!(config.algo.variant, Variant::Rail);
        assert_eq!(config.run.seed, 7);
        let explicit = resolve_config(None, &pairs(&[("run.seed", "9")]), Some("7")).unwrap();
        assert_eq!(explicit.run.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve_config(None, &pairs(&[("risk.alhpa", "0.2")]), None).is_err());
        assert!(resolve_config(None, &pairs(&[("rsk.alpha", "0.2")]), None).is_err());
        assert!(resolve_config(None, &pairs(&[("alpha", "0.2")]), None).is_err());
    }

    #[test]
    fn split_recognizes_both_override_forms() {
        let args = ["train", "--algo", "gail", "--risk.alpha", "0.3", "--risk.lambda=0.5"].map(String::from);
        let (plain, overrides) = split_overrides(args).unwrap();
        assert_eq!(plain, vec!["train", "--algo", "gail"]);
        assert_eq!(overrides, pairs(&[("risk.alpha", "0.3"), ("risk.lambda", "0.5")]));
    }

    #[test]
    fn bad_seed_variable_is_a_config_error() {
        let err = resolve_config(None, &[], Some("abc")).unwrap_err();
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = resolve_config(None, &pairs(&[("risk.lambda", "[0, 1]")]), None).unwrap();
        let back: Config = toml::from_str(&config.to_toml()).unwrap();
        assert_eq!(back, config);
    }
}
