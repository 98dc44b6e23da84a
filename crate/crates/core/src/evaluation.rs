//! Metrics, data splits, learning-curve aggregation, jumpstart and the
//! cross-validation grid search.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{self, ExperimentConfig, SplitTask, TrialInputs};
use crate::task_model::{scores, TaskData, TaskKind};

/// Root mean squared error.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    if predictions.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "rmse",
            expected: targets.len(),
            actual: predictions.len(),
        });
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// Rank-based (Mann–Whitney) area under the ROC curve. Tied scores share
/// their average rank, so each tied positive/negative pair counts 1/2.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "auc",
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (0-based) → average 1-based rank.
        let avg_rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            if labels[idx] > 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        start = end;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Rmse,
    Auc,
}

impl MetricKind {
    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Regression => MetricKind::Rmse,
            TaskKind::Classification => MetricKind::Auc,
        }
    }

    /// Map onto a "higher is better" scale.
    pub fn oriented(self, value: f64) -> f64 {
        match self {
            MetricKind::Rmse => -value,
            MetricKind::Auc => value,
        }
    }

    /// Percent improvement of `value` over `baseline`, positive when better.
    pub fn relative_improvement(self, value: f64, baseline: f64) -> f64 {
        match self {
            MetricKind::Rmse => (baseline - value) / baseline * 100.0,
            MetricKind::Auc => (value - baseline) / baseline * 100.0,
        }
    }
}

/// RMSE for regression, AUC for classification. `Ok(None)` when the test
/// labels hold a single class.
pub fn task_metric(theta: &DVector<f64>, test: &TaskData) -> Result<Option<f64>> {
    let s = scores(theta, test)?;
    match test.kind {
        TaskKind::Regression => rmse(s.as_slice(), test.targets.as_slice()).map(Some),
        TaskKind::Classification => match auc(s.as_slice(), test.targets.as_slice()) {
            Ok(v) => Ok(Some(v)),
            Err(Error::DegenerateLabels) => {
                log::debug!(
                    "task {}: single-class test labels, excluded from AUC average",
                    test.task_id
                );
                Ok(None)
            }
            Err(e) => Err(e),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    /// Share of instances going to the training half.
    pub fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { seed: 0, fraction: 0.5 }
    }
}

/// Seeded random train/test split with `⌈M·fraction⌉` training instances
/// (clamped so both sides are non-empty).
///
/// Classification tasks with at least two instances of each class are
/// stratified: each class is shuffled on its own and the classes are merged
/// by fractional position, so every class lands on both sides.
pub fn split_task(data: &TaskData, spec: &SplitSpec) -> Result<(TaskData, TaskData)> {
    let m = data.n_instances();
    if m < 2 {
        return Err(Error::TooFewInstances(m));
    }
    if !(spec.fraction > 0.0 && spec.fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must lie in (0, 1), got {}",
            spec.fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_train = ((m as f64 * spec.fraction).ceil() as usize).clamp(1, m - 1);

    let stratify = data.kind == TaskKind::Classification && {
        let pos = data.targets.iter().filter(|&&y| y > 0.0).count();
        pos >= 2 && m - pos >= 2
    };
    let order: Vec<usize> = if stratify {
        let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(m);
        for (class, positive) in [(0u8, true), (1u8, false)] {
            let mut members: Vec<usize> = (0..m).filter(|&i| (data.targets[i] > 0.0) == positive).collect();
            members.shuffle(&mut rng);
            let n = members.len() as f64;
            keyed.extend(
                members
                    .into_iter()
                    .enumerate()
                    .map(|(rank, idx)| ((rank as f64 + 0.5) / n, class, idx)),
            );
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, idx)| idx).collect()
    } else {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut rng);
        idx
    };
    Ok((data.select(&order[..n_train]), data.select(&order[n_train..])))
}

/// Per-task metric snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialResult {
    /// Mean test metric over every task learned up to step `t` (index `t-1`).
    pub curve: Vec<f64>,
    /// Consensus residual at the end of each step.
    pub consensus_residual: Vec<f64>,
    /// `‖L̄(t) − L̄(t−1)‖_F` of the network-mean dictionary, `L̄(0)` the initial one.
    pub dict_drift: Vec<f64>,
    /// Each task's metric the first time it is evaluated.
    pub first_eval: Vec<TaskScore>,
    /// Each task's metric at the end of the trial.
    pub final_eval: Vec<TaskScore>,
    /// Batch methods: objective after each alternation.
    pub objective_trace: Vec<f64>,
    /// Batch methods: whether the alternation met its tolerance.
    pub converged: bool,
    /// Online collective runs: smallest admissible-ρ bound seen over the steps.
    pub rho_bound: Option<f64>,
}

impl TrialResult {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub label: String,
    pub metric: MetricKind,
    pub trials: Vec<TrialResult>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStdErr {
    pub mean: f64,
    pub std_err: f64,
}

/// Mean and standard error of the mean (sample standard deviation / √n).
pub fn mean_std_err(values: &[f64]) -> MeanStdErr {
    let n = values.len();
    if n == 0 {
        return MeanStdErr {
            mean: f64::NAN,
            std_err: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanStdErr { mean, std_err }
}

impl ExperimentResult {
    pub fn n_steps(&self) -> usize {
        self.trials.first().map_or(0, |t| t.curve.len())
    }

    /// Across-trial mean and standard error of the learning curve at each step.
    pub fn curve_summary(&self) -> Vec<MeanStdErr> {
        (0..self.n_steps())
            .map(|t| {
                let column: Vec<f64> = self.trials.iter().map(|tr| tr.curve[t]).collect();
                mean_std_err(&column)
            })
            .collect()
    }

    /// Per-trial mean of the oriented curve (normalized area under the curve).
    pub fn curve_areas(&self) -> Vec<f64> {
        self.trials
            .iter()
            .map(|tr| tr.curve.iter().map(|&v| self.metric.oriented(v)).sum::<f64>() / tr.curve.len().max(1) as f64)
            .collect()
    }
}

/// Per-trial jumpstart (percent): mean relative improvement of each task's
/// first evaluation over the STL metric of the same task in the same trial.
pub fn jumpstart_per_trial(method: &ExperimentResult, stl: &ExperimentResult) -> Result<Vec<f64>> {
    if method.trials.len() != stl.trials.len() {
        return Err(Error::UnpairedConfigs(format!(
            "{} trials vs {} STL trials",
            method.trials.len(),
            stl.trials.len()
        )));
    }
    let metric = method.metric;
    method
        .trials
        .iter()
        .zip(&stl.trials)
        .enumerate()
        .map(|(trial, (m, s))| {
            let baseline: HashMap<&str, f64> = s.final_eval.iter().map(|ts| (ts.task_id.as_str(), ts.metric)).collect();
            let mut improvements = Vec::with_capacity(m.first_eval.len());
            for ts in &m.first_eval {
                let base = *baseline.get(ts.task_id.as_str()).ok_or_else(|| Error::MissingPair {
                    trial,
                    task_id: ts.task_id.clone(),
                })?;
                if base.abs() < f64::MIN_POSITIVE {
                    log::debug!("task {}: zero STL baseline, skipped in jumpstart", ts.task_id);
                    continue;
                }
                improvements.push(metric.relative_improvement(ts.metric, base));
            }
            Ok(if improvements.is_empty() {
                0.0
            } else {
                improvements.iter().sum::<f64>() / improvements.len() as f64
            })
        })
        .collect()
}

/// Mean jumpstart over trials, in percent.
pub fn jumpstart(method: &ExperimentResult, stl: &ExperimentResult) -> Result<f64> {
    let per_trial = jumpstart_per_trial(method, stl)?;
    Ok(per_trial.iter().sum::<f64>() / per_trial.len().max(1) as f64)
}

/// Hyperparameter grid. Empty lists fall back to the template value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamGrid {
    pub dict_size: Vec<usize>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl ParamGrid {
    /// `{10ⁿ | −6 ≤ n ≤ 6}`.
    pub fn powers_of_ten() -> Vec<f64> {
        (-6..=6).map(|n| 10f64.powi(n)).collect()
    }

    /// The full search space: λ, μ, ρ over powers of ten and
    /// `u ∈ {1, …, max(10, T/4)}` for `n_tasks` total tasks.
    pub fn full(n_tasks: usize) -> Self {
        let u_max = 10.max(n_tasks / 4);
        Self {
            dict_size: (1..=u_max).collect(),
            lambda: Self::powers_of_ten(),
            mu: Self::powers_of_ten(),
            rho: Self::powers_of_ten(),
        }
    }

    /// Cells ordered by `u`, then `λ`, then `μ`, then `ρ`, each ascending.
    pub fn cells(&self, template: &ExperimentConfig) -> Vec<ExperimentConfig> {
        fn or<T: Copy>(v: &[T], fallback: T) -> Vec<T> {
            if v.is_empty() {
                vec![fallback]
            } else {
                v.to_vec()
            }
        }
        let mut us = or(&self.dict_size, template.model.dict_size);
        let mut lambdas = or(&self.lambda, template.model.lambda);
        let mut mus = or(&self.mu, template.model.mu);
        let mut rhos = or(&self.rho, template.model.rho);
        us.sort_unstable();
        for v in [&mut lambdas, &mut mus, &mut rhos] {
            v.sort_by(f64::total_cmp);
        }
        let mut out = Vec::new();
        for &u in &us {
            for &lambda in &lambdas {
                for &mu in &mus {
                    for &rho in &rhos {
                        let mut cfg = template.clone();
                        cfg.model.dict_size = u;
                        cfg.model.lambda = lambda;
                        cfg.model.mu = mu;
                        cfg.model.rho = rho;
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSpec {
    /// Share of each training split held out for validation.
    pub holdout: f64,
    /// Trials averaged per grid cell.
    pub trials: usize,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        Self {
            holdout: 0.2,
            trials: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub config: ExperimentConfig,
    /// Oriented validation score (higher is better); `-inf` when the cell failed.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: ExperimentConfig,
    pub cells: Vec<GridCell>,
}

/// Replace each task's (train, test) pair by (train', validation) carved
/// from the training half.
pub fn validation_inputs(inputs: &TrialInputs, holdout: f64, seed: u64) -> Result<TrialInputs> {
    let spec = SplitSpec {
        seed,
        fraction: 1.0 - holdout,
    };
    let agents = inputs
        .agents
        .iter()
        .map(|stream| {
            stream
                .iter()
                .enumerate()
                .map(|(pos, task)| {
                    let spec = SplitSpec {
                        seed: simulator::derive_seed(spec.seed, pos as u64, 0x7661_6c69),
                        ..spec
                    };
                    let (train, test) = split_task(&task.train, &spec)?;
                    Ok(SplitTask {
                        id: task.id.clone(),
                        train,
                        test,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialInputs {
        agents,
        init_dict: inputs.init_dict.clone(),
    })
}

/// Validation score of one configuration: the oriented final learning-curve
/// value, averaged over `validation.trials` trials.
pub fn validation_score(config: &ExperimentConfig, tasks: &[TaskData], validation: &ValidationSpec) -> Result<f64> {
    let mut total = 0.0;
    let trials = validation.trials.max(1);
    let metric = tasks
        .first()
        .map(|t| MetricKind::for_task(t.kind))
        .ok_or(Error::EmptyInput)?;
    for trial in 0..trials {
        let inputs = simulator::trial_inputs(config, tasks, trial)?;
        let inputs = validation_inputs(
            &inputs,
            validation.holdout,
            simulator::derive_seed(config.seeds.split_seed, trial as u64, 0x6772_6964),
        )?;
        let result = simulator::run_trial_on(config, &inputs)?;
        let last = *result.curve.last().ok_or(Error::EmptyInput)?;
        total += metric.oriented(last);
    }
    Ok(total / trials as f64)
}

/// Brute-force search over `grid`, scoring each cell on validation data
/// carved from the training splits. Ties go to the smaller `u`, then the
/// smaller `λ`. Cells that fail numerically score `-inf`.
pub fn grid_search(
    template: &ExperimentConfig,
    tasks: &[TaskData],
    grid: &ParamGrid,
    validation: &ValidationSpec,
) -> Result<GridOutcome> {
    let configs = grid.cells(template);
    if configs.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let scores: Vec<Result<f64>> = configs
        .par_iter()
        .map(|cfg| validation_score(cfg, tasks, validation))
        .collect();
    let mut cells = Vec::with_capacity(configs.len());
    for (config, score) in configs.into_iter().zip(scores) {
        let score = match score {
            Ok(s) if s.is_finite() => s,
            Ok(_) => f64::NEG_INFINITY,
            Err(e) if e.class() == crate::error::ErrorClass::Numerical => {
                log::debug!("grid cell failed: {e}");
                f64::NEG_INFINITY
            }
            Err(e) => return Err(e),
        };
        cells.push(GridCell { config, score });
    }
    // Cells are already in (u, λ, μ, ρ) order, so the first maximum wins ties.
    let best = cells
        .iter()
        .fold(None::<&GridCell>, |best, c| match best {
            Some(b) if b.score >= c.score => Some(b),
            _ => Some(c),
        })
        .expect("non-empty grid")
        .config
        .clone();
    Ok(GridOutcome { best, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        let p = [0.3, -1.2, 4.5, 2.2, 0.0];
        let t = [0.1, -1.0, 4.0, 3.0, -0.5];
        let hand = ((0.04 + 0.04 + 0.25 + 0.64 + 0.25) / 5.0f64).sqrt();
        assert!((rmse(&p, &t).unwrap() - hand).abs() < 1e-12);
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyInput)));
    }

    fn brute_force_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi > 0.0 && yj < 0.0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[1.0, 1.0, -1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[1.0, -1.0, 1.0, -1.0]).unwrap(), 0.5);
        let s = [0.9, 0.8, 0.3, 0.1];
        let y = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(brute_force_auc(&s, &y), 0.75);
        assert_eq!(auc(&s, &y).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::DegenerateLabels)));
    }

    fn task(kind: TaskKind, targets: Vec<f64>) -> TaskData {
        let m = targets.len();
        TaskData::new(
            "t",
            kind,
            DMatrix::from_fn(2, m, |r, c| (r * m + c) as f64),
            DVector::from_vec(targets),
        )
        .unwrap()
    }

    #[test]
    fn split_examples() {
        let data = task(TaskKind::Regression, vec![1.0, 2.0]);
        let (tr, te) = split_task(&data, &SplitSpec::default()).unwrap();
        assert_eq!((tr.n_instances(), te.n_instances()), (1, 1));
        let data = task(TaskKind::Regression, (0..9).map(f64::from).collect());
        let spec = SplitSpec {
            seed: 42,
            fraction: 0.5,
        };
        let a = split_task(&data, &spec).unwrap();
        assert_eq!(a, split_task(&data, &spec).unwrap());
        assert_eq!(a.0.n_instances(), 5);
        let mut all: Vec<f64> = a.0.targets.iter().chain(a.1.targets.iter()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..9).map(f64::from).collect::<Vec<_>>());
        assert!(matches!(
            split_task(&task(TaskKind::Regression, vec![1.0]), &spec),
            Err(Error::TooFewInstances(1))
        ));
    }

    #[test]
    fn classification_split_keeps_both_classes_on_both_sides() {
        for seed in 0..50 {
            for n_pos in 2..6 {
                let mut y = vec![1.0; n_pos];
                y.extend(vec![-1.0; 9 - n_pos]);
                let data = task(TaskKind::Classification, y);
                let (tr, te) = split_task(&data, &SplitSpec { seed, fraction: 0.5 }).unwrap();
                for half in [&tr, &te] {
                    assert!(half.targets.iter().any(|&v| v > 0.0));
                    assert!(half.targets.iter().any(|&v| v < 0.0));
                }
                assert_eq!(tr.n_instances(), 5);
            }
        }
    }

    #[test]
    fn std_err_of_constant_is_zero() {
        let s = mean_std_err(&[2.0, 2.0, 2.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std_err, 0.0);
        let s = mean_std_err(&[1.0, 3.0]);
        assert!((s.std_err - 1.0).abs() < 1e-15);
    }

    #[test]
    fn full_grid_uses_thirteen_powers() {
        assert_eq!(ParamGrid::powers_of_ten().len(), 13);
        assert_eq!(ParamGrid::powers_of_ten()[0], 1e-6);
        assert_eq!(ParamGrid::full(29).dict_size, (1..=10).collect::<Vec<_>>());
        assert_eq!(ParamGrid::full(190).dict_size.len(), 47);
    }
}
