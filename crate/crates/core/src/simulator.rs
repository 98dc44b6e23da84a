//! End-to-end drivers: the online collective learner, its single-agent and
//! single-task baselines, and the two batch learners.
//!
//! Every trial is a pure function of `(config, tasks, trial index)`. Task
//! splits, task-to-agent streams and the initial dictionary all come from
//! seeds in [`Seeds`], so paired methods see identical data and orders.
//!
//! Learning curves follow the lifelong-learning convention: the value at step
//! `t` averages the test metric over every task learned so far, network-wide,
//! using each task's stored code and its agent's current dictionary. Codes of
//! old tasks are never recomputed by the online methods.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{
    admm_consensus_round, admm_until_consensus, consensus_residual, make_topology, rho_admissibility, AdmmParams,
    DualVariable, NetworkGraph, TopologyKind,
};
use crate::error::{Error, Result};
use crate::evaluation::{split_task, task_metric, ExperimentResult, MetricKind, SplitSpec, TaskScore, TrialResult};
use crate::knowledge_base::{ella_update, Accumulator, KnowledgeBase};
use crate::sparse_coding::{accept_capped, lasso_objective, solve_weighted_lasso, LassoOptions, SparseCode};
use crate::task_model::{fit_task, NewtonOptions, TaskData, TaskEncoding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Colla,
    Ella,
    Stl,
    GoMtl,
    OfflineColla,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Colla => "colla",
            Method::Ella => "ella",
            Method::Stl => "stl",
            Method::GoMtl => "go_mtl",
            Method::OfflineColla => "offline_colla",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Number of dictionary columns `u`.
    pub dict_size: usize,
    pub lambda: f64,
    pub mu: f64,
    pub rho: f64,
    pub ridge_reg: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            dict_size: 4,
            lambda: 1e-2,
            mu: 1e-2,
            rho: 0.1,
            ridge_reg: 1e-2,
        }
    }
}

/// ADMM iterations per time step: `K(t) = k1 + ⌈k2 / t⌉`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KSchedule {
    pub k1: usize,
    pub k2: usize,
}

impl Default for KSchedule {
    fn default() -> Self {
        Self { k1: 5, k2: 45 }
    }
}

impl KSchedule {
    pub fn iterations(&self, t: usize) -> usize {
        self.k1 + self.k2.div_ceil(t.max(1))
    }
}

/// The only sources of randomness in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split_seed: u64,
    /// Task order, task-to-agent allocation and the initial dictionary.
    pub stream_seed: u64,
    pub topology_seed: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            split_seed: 1,
            stream_seed: 2,
            topology_seed: 3,
        }
    }
}

/// Stopping rules for the batch learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchOptions {
    /// Relative objective change that ends the alternation.
    pub tol: f64,
    pub max_alternations: usize,
    /// Cap on ADMM iterations per alternation (offline collective learner).
    pub admm_max_iter: usize,
    /// Consensus residual at which an ADMM solve counts as converged.
    pub consensus_tol: f64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_alternations: 200,
            admm_max_iter: 5000,
            consensus_tol: 1e-9,
        }
    }
}

fn default_trials() -> usize {
    1
}

fn default_split_fraction() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_agents() -> usize {
    1
}

fn default_topology() -> TopologyKind {
    TopologyKind::Chain
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub method: Method,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    #[serde(default = "default_topology")]
    pub topology: TopologyKind,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
    #[serde(default = "default_true")]
    pub shuffle_tasks: bool,
    /// Optional fixed task groups, one list of task ids per agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<Vec<String>>>,
    /// Optional primal sweep order for the ADMM rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_order: Option<Vec<usize>>,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub schedule: KSchedule,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub lasso: LassoOptions,
    #[serde(default)]
    pub newton: NewtonOptions,
    #[serde(default)]
    pub batch: BatchOptions,
}

impl ExperimentConfig {
    pub fn new(method: Method) -> Self {
        Self {
            label: None,
            method,
            n_agents: 1,
            topology: TopologyKind::Chain,
            n_trials: 1,
            split_fraction: 0.5,
            shuffle_tasks: true,
            allocation: None,
            sweep_order: None,
            model: ModelParams::default(),
            schedule: KSchedule::default(),
            seeds: Seeds::default(),
            lasso: LassoOptions::default(),
            newton: NewtonOptions::default(),
            batch: BatchOptions::default(),
        }
    }

    pub fn display_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| match self.method {
            Method::Colla | Method::OfflineColla => format!("{}-{}", self.method.name(), self.topology),
            m => m.name().to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if self.n_agents == 0 {
            return Err(Error::TooFewAgents(0));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        if m.dict_size == 0 {
            return Err(Error::Config("dict_size must be at least 1".into()));
        }
        for (name, v) in [("lambda", m.lambda), ("ridge_reg", m.ridge_reg)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mu", m.mu), ("rho", m.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.schedule.k1 + self.schedule.k2 == 0 {
            return Err(Error::Config("schedule must give at least one ADMM iteration".into()));
        }
        if let Some(groups) = &self.allocation {
            if groups.len() != self.n_agents {
                return Err(Error::Config(format!(
                    "allocation has {} groups for {} agents",
                    groups.len(),
                    self.n_agents
                )));
            }
        }
        Ok(())
    }
}

/// SplitMix64-style mixing of a base seed with a counter and a purpose tag.
pub fn derive_seed(base: u64, index: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(salt.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SALT_SPLIT: u64 = 0x73706c74;
const SALT_STREAM: u64 = 0x7374726d;

/// Per-agent ordered task indices; all streams have equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskStream {
    pub per_agent: Vec<Vec<usize>>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.per_agent.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One task's halves as seen by a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTask {
    pub id: String,
    pub train: TaskData,
    pub test: TaskData,
}

/// Everything a single trial consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialInputs {
    /// Per-agent task sequences.
    pub agents: Vec<Vec<SplitTask>>,
    /// Shared starting dictionary.
    pub init_dict: DMatrix<f64>,
}

impl TrialInputs {
    pub fn n_steps(&self) -> usize {
        self.agents.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.init_dict.nrows()
    }
}

/// Allocate tasks to agents for one trial. Leftover tasks that would break
/// equal stream lengths are dropped.
pub fn make_streams(config: &ExperimentConfig, tasks: &[TaskData], rng: &mut ChaCha8Rng) -> Result<TaskStream> {
    let n = config.n_agents;
    let mut per_agent: Vec<Vec<usize>> = match &config.allocation {
        Some(groups) => {
            let index: HashMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.task_id.as_str(), i)).collect();
            let mut seen = vec![false; tasks.len()];
            let mut out = Vec::with_capacity(n);
            for group in groups {
                let mut ids = Vec::with_capacity(group.len());
                for id in group {
                    let &i = index
                        .get(id.as_str())
                        .ok_or_else(|| Error::Config(format!("allocation names unknown task {id:?}")))?;
                    if std::mem::replace(&mut seen[i], true) {
                        return Err(Error::Config(format!("task {id:?} allocated to two agents")));
                    }
                    ids.push(i);
                }
                if config.shuffle_tasks {
                    ids.shuffle(rng);
                }
                out.push(ids);
            }
            out
        }
        None => {
            let mut order: Vec<usize> = (0..tasks.len()).collect();
            if config.shuffle_tasks {
                order.shuffle(rng);
            }
            let per = tasks.len() / n;
            (0..n).map(|i| order[i * per..(i + 1) * per].to_vec()).collect()
        }
    };
    let len = per_agent.iter().map(Vec::len).min().unwrap_or(0);
    let dropped: usize = per_agent.iter().map(|s| s.len() - len).sum();
    if dropped > 0 {
        log::info!("dropping {dropped} task(s) to keep agent streams equal length");
    }
    for s in &mut per_agent {
        s.truncate(len);
    }
    if len == 0 {
        return Err(Error::Config("no tasks per agent after allocation".into()));
    }
    Ok(TaskStream { per_agent })
}

/// Random starting dictionary with `N(0, 1/d)` entries.
pub fn initial_dictionary(d: usize, u: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    DMatrix::from_fn(d, u, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

/// Build the streams, splits and starting dictionary of trial `trial`.
pub fn trial_inputs(config: &ExperimentConfig, tasks: &[TaskData], trial: usize) -> Result<TrialInputs> {
    config.validate()?;
    let first = tasks.first().ok_or(Error::EmptyInput)?;
    let d = first.dim();
    if let Some(bad) = tasks.iter().find(|t| t.dim() != d || t.kind != first.kind) {
        return Err(Error::Config(format!(
            "task {} does not match the dimension or kind of task {}",
            bad.task_id, first.task_id
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seeds.stream_seed, trial as u64, SALT_STREAM));
    let stream = make_streams(config, tasks, &mut rng)?;
    let init_dict = initial_dictionary(d, config.model.dict_size, &mut rng);
    let agents = stream
        .per_agent
        .iter()
        .map(|ids| {
            ids.iter()
                .map(|&i| {
                    let spec = SplitSpec {
                        seed: derive_seed(config.seeds.split_seed, trial as u64, SALT_SPLIT ^ i as u64),
                        fraction: config.split_fraction,
                    };
                    let (train, test) = split_task(&tasks[i], &spec)?;
                    Ok(SplitTask {
                        id: tasks[i].task_id.clone(),
                        train,
                        test,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialInputs { agents, init_dict })
}

/// A task an agent has learned: its code and encoding plus the test half.
#[derive(Debug, Clone)]
pub struct LearnedTask {
    pub id: String,
    pub encoding: TaskEncoding,
    pub code: SparseCode,
    pub test: TaskData,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub agent_id: usize,
    pub accumulator: Accumulator,
    pub kb: KnowledgeBase,
    /// In learning order; `accumulator.task_count() == learned.len()`.
    pub learned: Vec<LearnedTask>,
}

impl AgentState {
    pub fn new(agent_id: usize, init: &DMatrix<f64>) -> Self {
        Self {
            agent_id,
            accumulator: Accumulator::new(init.nrows(), init.ncols()),
            kb: KnowledgeBase::new(init.clone()),
            learned: Vec::new(),
        }
    }

    /// Encode, code against the current dictionary and accumulate one task.
    pub fn learn(&mut self, task: &SplitTask, config: &ExperimentConfig) -> Result<()> {
        let encoding = fit_task(&task.train, config.model.ridge_reg, config.newton)?;
        let code = accept_capped(solve_weighted_lasso(
            &self.kb.dict,
            &encoding,
            config.model.mu,
            config.lasso,
            None,
        ))?;
        self.accumulator.accumulate(&code.s, &encoding)?;
        self.learned.push(LearnedTask {
            id: task.id.clone(),
            encoding,
            code,
            test: task.test.clone(),
        });
        Ok(())
    }

    fn metric_of(&self, task: &LearnedTask) -> Result<Option<f64>> {
        task_metric(&self.kb.compose(&task.code.s), &task.test)
    }
}

fn mean_dictionary(dicts: impl Iterator<Item = DMatrix<f64>>) -> DMatrix<f64> {
    let mut n = 0usize;
    let mut acc: Option<DMatrix<f64>> = None;
    for d in dicts {
        n += 1;
        acc = Some(match acc {
            Some(a) => a + d,
            None => d,
        });
    }
    acc.map(|a| a / n as f64).unwrap_or_else(|| DMatrix::zeros(0, 0))
}

fn mean_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Shared online loop for the collective learner (with a graph) and the
/// isolated lifelong learners (without one).
fn run_online(config: &ExperimentConfig, inputs: &TrialInputs, graph: Option<&NetworkGraph>) -> Result<TrialResult> {
    let n = inputs.agents.len();
    let steps = inputs.n_steps();
    let mut agents: Vec<AgentState> = (0..n).map(|i| AgentState::new(i, &inputs.init_dict)).collect();
    let mut duals = graph.map(|g| DualVariable::zeros(g, inputs.dim(), config.model.dict_size));
    let mut result = TrialResult::default();
    let mut prev_mean = inputs.init_dict.clone();

    for t in 1..=steps {
        for (i, agent) in agents.iter_mut().enumerate() {
            agent
                .learn(&inputs.agents[i][t - 1], config)
                .map_err(|e| e.in_agent(i).at_step(t))?;
        }
        match (graph, duals.as_mut()) {
            (Some(g), Some(z)) => {
                let accs: Vec<Accumulator> = agents.iter().map(|a| a.accumulator.clone()).collect();
                let mut dicts: Vec<KnowledgeBase> = agents.iter().map(|a| a.kb.clone()).collect();
                let mut params = AdmmParams::new(config.model.rho, config.model.lambda, config.schedule.iterations(t));
                params.order = config.sweep_order.clone();
                let trace = admm_consensus_round(g, &accs, &mut dicts, z, &params).map_err(|e| e.at_step(t))?;
                for (a, kb) in agents.iter_mut().zip(dicts) {
                    a.kb = kb;
                }
                result.consensus_residual.push(trace.final_residual());
                let diag = rho_admissibility(g, &accs, config.model.lambda, config.model.rho);
                result.rho_bound = Some(result.rho_bound.map_or(diag.bound, |b: f64| b.min(diag.bound)));
            }
            _ => {
                for (i, agent) in agents.iter_mut().enumerate() {
                    agent.kb =
                        ella_update(&agent.accumulator, config.model.lambda).map_err(|e| e.in_agent(i).at_step(t))?;
                }
                result.consensus_residual.push(0.0);
            }
        }
        debug_assert!(agents.iter().all(|a| a.learned.len() == t));

        let mean = mean_dictionary(agents.iter().map(|a| a.kb.dict.clone()));
        result.dict_drift.push((&mean - &prev_mean).norm());
        prev_mean = mean;

        let mut values = Vec::with_capacity(n * t);
        for agent in &agents {
            for (pos, task) in agent.learned.iter().enumerate() {
                let Some(v) = agent.metric_of(task)? else { continue };
                values.push(v);
                if pos == t - 1 {
                    result.first_eval.push(TaskScore {
                        task_id: task.id.clone(),
                        metric: v,
                    });
                }
            }
        }
        result.curve.push(mean_of(&values));
    }
    for agent in &agents {
        for task in &agent.learned {
            if let Some(v) = agent.metric_of(task)? {
                result.final_eval.push(TaskScore {
                    task_id: task.id.clone(),
                    metric: v,
                });
            }
        }
    }
    result.converged = true;
    Ok(result)
}

/// Online collective lifelong learning over the configured topology.
pub fn run_colla(config: &ExperimentConfig, inputs: &TrialInputs) -> Result<TrialResult> {
    let graph = make_topology(config.topology, inputs.agents.len(), config.seeds.topology_seed)?;
    run_online(config, inputs, Some(&graph))
}

/// Isolated lifelong learners, one per agent stream, with no communication.
pub fn run_ella(config: &ExperimentConfig, inputs: &TrialInputs) -> Result<TrialResult> {
    run_online(config, inputs, None)
}

/// Independent single-task fits. The curve at `t` averages the tasks seen so
/// far, so it is paired step by step with the online methods.
pub fn run_stl(config: &ExperimentConfig, inputs: &TrialInputs) -> Result<TrialResult> {
    let steps = inputs.n_steps();
    let mut per_task: Vec<Vec<Option<f64>>> = Vec::with_capacity(inputs.agents.len());
    let mut result = TrialResult::default();
    for (i, stream) in inputs.agents.iter().enumerate() {
        let mut vals = Vec::with_capacity(steps);
        for (t, task) in stream.iter().enumerate() {
            let enc = fit_task(&task.train, config.model.ridge_reg, config.newton)
                .map_err(|e| e.in_agent(i).at_step(t + 1))?;
            vals.push(task_metric(&enc.alpha, &task.test)?);
        }
        per_task.push(vals);
    }
    for t in 0..steps {
        let mut values = Vec::new();
        for (stream, vals) in inputs.agents.iter().zip(&per_task) {
            values.extend(vals[..=t].iter().flatten());
            if let Some(v) = vals[t] {
                result.first_eval.push(TaskScore {
                    task_id: stream[t].id.clone(),
                    metric: v,
                });
            }
        }
        result.curve.push(mean_of(&values));
        result.consensus_residual.push(0.0);
        result.dict_drift.push(0.0);
    }
    result.final_eval = result.first_eval.clone();
    result.converged = true;
    Ok(result)
}

/// A task held by a batch learner.
struct BatchTask {
    id: String,
    encoding: TaskEncoding,
    code: DVector<f64>,
    test: TaskData,
}

fn encode_all(config: &ExperimentConfig, stream: &[SplitTask], agent: usize) -> Result<Vec<BatchTask>> {
    stream
        .iter()
        .map(|task| {
            let encoding =
                fit_task(&task.train, config.model.ridge_reg, config.newton).map_err(|e| e.in_agent(agent))?;
            Ok(BatchTask {
                id: task.id.clone(),
                code: DVector::zeros(config.model.dict_size),
                encoding,
                test: task.test.clone(),
            })
        })
        .collect()
}

fn recode(tasks: &mut [BatchTask], dict: &DMatrix<f64>, config: &ExperimentConfig) -> Result<()> {
    for task in tasks {
        let code = accept_capped(solve_weighted_lasso(
            dict,
            &task.encoding,
            config.model.mu,
            config.lasso,
            Some(&task.code),
        ))?;
        task.code = code.s;
    }
    Ok(())
}

fn accumulate_all(tasks: &[BatchTask], d: usize, u: usize) -> Result<Accumulator> {
    let mut acc = Accumulator::new(d, u);
    for task in tasks {
        acc.accumulate(&task.code, &task.encoding)?;
    }
    Ok(acc)
}

/// `(1/T) Σ_tasks [‖α − L s‖²_Γ + μ‖s‖₁] + λ · mean_i ‖L_i‖²_F`, each task
/// scored against its own agent's dictionary.
fn pooled_objective(groups: &[Vec<BatchTask>], dicts: &[&DMatrix<f64>], mu: f64, lambda: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (tasks, dict) in groups.iter().zip(dicts) {
        for task in tasks {
            let enc = &task.encoding;
            total += lasso_objective(dict, enc, mu, &task.code);
            count += 1;
        }
    }
    let reg = dicts.iter().map(|d| d.norm_squared()).sum::<f64>() / dicts.len() as f64;
    total / count.max(1) as f64 + lambda * reg
}

fn batch_result(
    groups: &[Vec<BatchTask>],
    dicts: &[&DMatrix<f64>],
    steps: usize,
    trace: Vec<f64>,
    converged: bool,
    residual: f64,
) -> Result<TrialResult> {
    let mut result = TrialResult {
        objective_trace: trace,
        converged,
        ..TrialResult::default()
    };
    let mut values = Vec::new();
    for (tasks, dict) in groups.iter().zip(dicts) {
        for task in tasks {
            if let Some(v) = task_metric(&(*dict * &task.code), &task.test)? {
                values.push(v);
                result.final_eval.push(TaskScore {
                    task_id: task.id.clone(),
                    metric: v,
                });
            }
        }
    }
    result.first_eval = result.final_eval.clone();
    let asymptote = mean_of(&values);
    result.curve = vec![asymptote; steps];
    result.consensus_residual = vec![residual; steps];
    result.dict_drift = vec![0.0; steps];
    Ok(result)
}

fn relative_change(prev: f64, next: f64) -> f64 {
    (prev - next).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Centralized batch learner over every task in every stream: alternate
/// LASSO coding of all tasks and the closed-form pooled dictionary solve.
pub fn run_gomtl(config: &ExperimentConfig, inputs: &TrialInputs) -> Result<TrialResult> {
    let (d, u) = inputs.init_dict.shape();
    let mut tasks = Vec::new();
    for (i, stream) in inputs.agents.iter().enumerate() {
        tasks.extend(encode_all(config, stream, i)?);
    }
    let mut groups = vec![tasks];
    let mut dict = inputs.init_dict.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.batch.max_alternations {
        recode(&mut groups[0], &dict, config)?;
        let acc = accumulate_all(&groups[0], d, u)?;
        dict = ella_update(&acc, config.model.lambda)?.dict;
        let obj = pooled_objective(&groups, &[&dict], config.model.mu, config.model.lambda);
        let done = trace
            .last()
            .is_some_and(|&p| relative_change(p, obj) < config.batch.tol);
        trace.push(obj);
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "{}",
            Error::AlternationLimit {
                alternations: config.batch.max_alternations
            }
        );
    }
    batch_result(&groups, &[&dict], inputs.n_steps(), trace, converged, 0.0)
}

/// Distributed batch learner: every agent holds its whole stream up front;
/// alternate local re-coding with ADMM rounds run to consensus.
pub fn run_offline_colla(config: &ExperimentConfig, inputs: &TrialInputs) -> Result<TrialResult> {
    let n = inputs.agents.len();
    let (d, u) = inputs.init_dict.shape();
    let graph = make_topology(config.topology, n, config.seeds.topology_seed)?;
    let mut groups = inputs
        .agents
        .iter()
        .enumerate()
        .map(|(i, s)| encode_all(config, s, i))
        .collect::<Result<Vec<_>>>()?;
    let mut dicts = vec![KnowledgeBase::new(inputs.init_dict.clone()); n];
    let mut duals = DualVariable::zeros(&graph, d, u);
    let mut params = AdmmParams::new(config.model.rho, config.model.lambda, config.batch.admm_max_iter);
    params.order = config.sweep_order.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut residual = 0.0;
    for _ in 0..config.batch.max_alternations {
        for (i, tasks) in groups.iter_mut().enumerate() {
            recode(tasks, &dicts[i].dict, config).map_err(|e| e.in_agent(i))?;
        }
        let accs = groups
            .iter()
            .map(|g| accumulate_all(g, d, u))
            .collect::<Result<Vec<_>>>()?;
        let round = admm_until_consensus(
            &graph,
            &accs,
            &mut dicts,
            &mut duals,
            &params,
            config.batch.consensus_tol,
        )?;
        residual = round.final_residual();
        let refs: Vec<&DMatrix<f64>> = dicts.iter().map(|k| &k.dict).collect();
        let obj = pooled_objective(&groups, &refs, config.model.mu, config.model.lambda);
        let done = residual <= 1e-6
            && trace
                .last()
                .is_some_and(|&p| relative_change(p, obj) < config.batch.tol);
        trace.push(obj);
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "{}",
            Error::AlternationLimit {
                alternations: config.batch.max_alternations
            }
        );
    }
    let refs: Vec<&DMatrix<f64>> = dicts.iter().map(|k| &k.dict).collect();
    batch_result(&groups, &refs, inputs.n_steps(), trace, converged, residual)
}

/// Run the configured method on prepared inputs.
pub fn run_trial_on(config: &ExperimentConfig, inputs: &TrialInputs) -> Result<TrialResult> {
    match config.method {
        Method::Colla => run_colla(config, inputs),
        Method::Ella => run_ella(config, inputs),
        Method::Stl => run_stl(config, inputs),
        Method::GoMtl => run_gomtl(config, inputs),
        Method::OfflineColla => run_offline_colla(config, inputs),
    }
}

pub fn run_trial(config: &ExperimentConfig, tasks: &[TaskData], trial: usize) -> Result<TrialResult> {
    let inputs = trial_inputs(config, tasks, trial)?;
    run_trial_on(config, &inputs)
}

/// All trials of an experiment, in parallel on the current rayon pool.
/// Results are ordered by trial index regardless of completion order.
pub fn run_experiment(config: &ExperimentConfig, tasks: &[TaskData]) -> Result<ExperimentResult> {
    config.validate()?;
    let metric = tasks
        .first()
        .map(|t| MetricKind::for_task(t.kind))
        .ok_or(Error::EmptyInput)?;
    let start = Instant::now();
    let trials = (0..config.n_trials)
        .into_par_iter()
        .map(|trial| run_trial(config, tasks, trial))
        .collect::<Result<Vec<_>>>()?;
    let inadmissible = trials
        .iter()
        .filter(|t| {
            t.rho_bound
                .is_some_and(|b| !(config.model.rho > 0.0 && config.model.rho < b))
        })
        .count();
    if inadmissible > 0 {
        let worst = trials.iter().filter_map(|t| t.rho_bound).fold(f64::INFINITY, f64::min);
        log::warn!(
            "rho = {} exceeds the admissible bound in {inadmissible} of {} trials (smallest bound {worst:e})",
            config.model.rho,
            trials.len()
        );
    }
    Ok(ExperimentResult {
        label: config.display_label(),
        metric,
        trials,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Consensus residual of a set of agent states.
pub fn agents_residual(graph: &NetworkGraph, agents: &[AgentState]) -> f64 {
    let dicts: Vec<KnowledgeBase> = agents.iter().map(|a| a.kb.clone()).collect();
    consensus_residual(graph, &dicts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::TaskKind;

    fn toy_tasks(n: usize, d: usize, m: usize, seed: u64) -> Vec<TaskData> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = DMatrix::from_fn(d, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        (0..n)
            .map(|k| {
                let s = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
                let theta = &basis * s;
                let x = DMatrix::from_fn(d, m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = x.tr_mul(&theta).map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal));
                TaskData::new(format!("task{k}"), TaskKind::Regression, x, y).unwrap()
            })
            .collect()
    }

    #[test]
    fn k_schedule() {
        let k = KSchedule { k1: 5, k2: 45 };
        assert_eq!(k.iterations(1), 50);
        assert_eq!(k.iterations(2), 28);
        assert_eq!(k.iterations(45), 6);
        assert_eq!(k.iterations(100), 6);
    }

    #[test]
    fn streams_are_equal_length_and_disjoint() {
        let tasks = toy_tasks(11, 3, 6, 1);
        let mut cfg = ExperimentConfig::new(Method::Colla);
        cfg.n_agents = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = make_streams(&cfg, &tasks, &mut rng).unwrap();
        assert_eq!(s.per_agent.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3]);
        let mut all: Vec<usize> = s.per_agent.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn explicit_allocation_is_respected() {
        let tasks = toy_tasks(5, 3, 6, 1);
        let mut cfg = ExperimentConfig::new(Method::Colla);
        cfg.n_agents = 2;
        cfg.shuffle_tasks = false;
        cfg.allocation = Some(vec![
            vec!["task0".into(), "task1".into(), "task2".into()],
            vec!["task3".into(), "task4".into()],
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = make_streams(&cfg, &tasks, &mut rng).unwrap();
        assert_eq!(s.per_agent, vec![vec![0, 1], vec![3, 4]]);
        cfg.allocation = Some(vec![vec!["task0".into()], vec!["task0".into()]]);
        assert!(make_streams(&cfg, &tasks, &mut rng).is_err());
    }

    #[test]
    fn single_agent_colla_is_bit_identical_to_ella() {
        let tasks = toy_tasks(6, 4, 10, 2);
        let mut cfg = ExperimentConfig::new(Method::Colla);
        cfg.model.dict_size = 2;
        let a = run_trial(&cfg, &tasks, 0).unwrap();
        cfg.method = Method::Ella;
        let b = run_trial(&cfg, &tasks, 0).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.dict_drift, b.dict_drift);
        assert_eq!(a.final_eval, b.final_eval);
    }

    #[test]
    fn single_agent_offline_matches_gomtl() {
        let tasks = toy_tasks(6, 4, 10, 3);
        let mut cfg = ExperimentConfig::new(Method::GoMtl);
        cfg.model.dict_size = 2;
        let a = run_trial(&cfg, &tasks, 0).unwrap();
        cfg.method = Method::OfflineColla;
        let b = run_trial(&cfg, &tasks, 0).unwrap();
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.final_eval, b.final_eval);
    }

    #[test]
    fn online_result_shapes_and_synchrony() {
        let tasks = toy_tasks(8, 4, 10, 4);
        let mut cfg = ExperimentConfig::new(Method::Colla);
        cfg.n_agents = 2;
        cfg.model.dict_size = 2;
        let r = run_trial(&cfg, &tasks, 0).unwrap();
        assert_eq!(r.curve.len(), 4);
        assert_eq!(r.consensus_residual.len(), 4);
        assert_eq!(r.dict_drift.len(), 4);
        assert_eq!(r.first_eval.len(), 8);
        assert_eq!(r.final_eval.len(), 8);
    }

    #[test]
    fn trials_are_deterministic() {
        let tasks = toy_tasks(6, 3, 8, 5);
        let mut cfg = ExperimentConfig::new(Method::Colla);
        cfg.n_agents = 3;
        cfg.n_trials = 3;
        cfg.model.dict_size = 2;
        let a = run_experiment(&cfg, &tasks).unwrap();
        let b = run_experiment(&cfg, &tasks).unwrap();
        assert_eq!(a.trials, b.trials);
        assert_ne!(a.trials[0].curve, a.trials[1].curve);
    }

    #[test]
    fn gomtl_objective_never_increases() {
        let tasks = toy_tasks(8, 4, 10, 6);
        let mut cfg = ExperimentConfig::new(Method::GoMtl);
        cfg.model.dict_size = 3;
        let r = run_trial(&cfg, &tasks, 0).unwrap();
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn stl_curve_averages_seen_tasks() {
        let tasks = toy_tasks(4, 3, 10, 7);
        let cfg = ExperimentConfig::new(Method::Stl);
        let r = run_trial(&cfg, &tasks, 0).unwrap();
        let firsts: Vec<f64> = r.first_eval.iter().map(|s| s.metric).collect();
        assert!((r.curve[3] - firsts.iter().sum::<f64>() / 4.0).abs() < 1e-12);
        assert!((r.curve[0] - firsts[0]).abs() < 1e-15);
    }

    #[test]
    fn derive_seed_separates_indices() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_eq!(derive_seed(9, 4, 2), derive_seed(9, 4, 2));
    }
}
