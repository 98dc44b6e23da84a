//! Run configurations and the artifact writers behind the CLI verbs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{csv_err, export_csv, load_dataset};
use super::format::{csv_writer, fmt_f64};
use super::synth::{synth_generate, SynthSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    grid_search, jumpstart_per_trial, mean_std_err, ExperimentResult, GridOutcome, ParamGrid, ValidationSpec,
};
use crate::simulator::{run_experiment, ExperimentConfig, Method, Seeds};
use crate::task_model::{TaskData, TaskKind};

/// Where the tasks come from: a manifest on disk or an inline generator spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl DatasetSource {
    pub fn load(&self) -> Result<Vec<TaskData>> {
        match (&self.manifest, &self.synth) {
            (Some(path), None) => Ok(load_dataset(path)?.1),
            (None, Some(spec)) => Ok(synth_generate(spec)?.tasks),
            _ => Err(Error::Config(
                "[dataset] needs exactly one of `manifest` or `synth`".into(),
            )),
        }
    }
}

/// Grid section of a run config. Empty lists keep the experiment's value;
/// a section with every list empty searches the full default space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub dict_size: Vec<usize>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub validation: ValidationSpec,
}

impl GridSection {
    pub fn param_grid(&self, n_tasks: usize) -> ParamGrid {
        let grid = ParamGrid {
            dict_size: self.dict_size.clone(),
            lambda: self.lambda.clone(),
            mu: self.mu.clone(),
            rho: self.rho.clone(),
        };
        if grid == ParamGrid::default() {
            ParamGrid::full(n_tasks)
        } else {
            grid
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Parse a config file; a relative manifest path is resolved against the
    /// config's directory and stored absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(m) = &mut cfg.dataset.manifest {
            if m.is_relative() {
                *m = path.parent().unwrap_or(Path::new(".")).join(&*m);
            }
            *m = fs::canonicalize(&*m).map_err(|e| Error::Config(format!("{}: {e}", m.display())))?;
        }
        cfg.experiment.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Shared seed block for `compare`.
pub fn load_seed_block(path: &Path) -> Result<Seeds> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Write `curves.csv` (one row per trial and step).
pub fn write_curves(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["trial", "t", "metric_mean", "consensus_residual", "dict_drift"])
        .map_err(csv_err)?;
    for (trial, r) in result.trials.iter().enumerate() {
        for t in 0..r.curve.len() {
            w.write_record([
                trial.to_string(),
                (t + 1).to_string(),
                fmt_f64(r.curve[t]),
                fmt_f64(r.consensus_residual[t]),
                fmt_f64(r.dict_drift[t]),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write `summary.csv`: across-trial mean and standard error per step.
pub fn write_summary(results: &[&ExperimentResult], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "t", "mean", "std_err"]).map_err(csv_err)?;
    for result in results {
        for (t, s) in result.curve_summary().iter().enumerate() {
            w.write_record([
                result.label.clone(),
                (t + 1).to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.std_err),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Execute one configured experiment and write its artifact directory:
/// `curves.csv`, `summary.csv`, `config.snapshot` and `run.log`.
pub fn run_to_dir(config: &RunConfig, out: &Path) -> Result<ExperimentResult> {
    let tasks = config.dataset.load()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.snapshot"), config.to_toml()?)?;
    let result = run_experiment(&config.experiment, &tasks)?;
    write_curves(&result, &out.join("curves.csv"))?;
    write_summary(&[&result], &out.join("summary.csv"))?;

    let mut log = String::new();
    let _ = writeln!(log, "label: {}", result.label);
    let _ = writeln!(log, "tasks: {}", tasks.len());
    let _ = writeln!(log, "trials: {}", result.trials.len());
    let _ = writeln!(log, "steps: {}", result.n_steps());
    if let Some(last) = result.curve_summary().last() {
        let _ = writeln!(
            log,
            "final {:?}: {} +/- {}",
            result.metric,
            fmt_f64(last.mean),
            fmt_f64(last.std_err)
        );
    }
    if let Some(bound) = result.trials.iter().filter_map(|t| t.rho_bound).reduce(f64::min) {
        let rho = config.experiment.model.rho;
        let _ = writeln!(
            log,
            "rho: {rho} (smallest admissible bound {bound:e}, admissible = {})",
            rho > 0.0 && rho < bound
        );
    }
    let unconverged = result.trials.iter().filter(|t| !t.converged).count();
    let _ = writeln!(log, "unconverged trials: {unconverged}");
    let _ = writeln!(log, "wall time (s): {:.3}", result.wall_time_secs);
    fs::write(out.join("run.log"), log)?;
    Ok(result)
}

/// `run` verb: load a config file and write its artifact.
pub fn run_config_file(config_path: &Path, out: &Path) -> Result<ExperimentResult> {
    run_to_dir(&RunConfig::load(config_path)?, out)
}

fn pairing_key(c: &RunConfig) -> impl PartialEq + std::fmt::Debug + '_ {
    let e = &c.experiment;
    (
        &c.dataset,
        e.seeds,
        e.n_agents,
        e.n_trials,
        e.split_fraction.to_bits(),
        e.shuffle_tasks,
        &e.allocation,
    )
}

/// Fail unless every config shares the dataset, seeds and stream layout.
pub fn check_paired(configs: &[RunConfig]) -> Result<()> {
    let Some(first) = configs.first() else {
        return Err(Error::Config("nothing to compare".into()));
    };
    let key = pairing_key(first);
    for (i, c) in configs.iter().enumerate().skip(1) {
        let other = pairing_key(c);
        if other != key {
            return Err(Error::UnpairedConfigs(format!(
                "config {i} differs from config 0 in dataset, seeds or stream layout: {other:?} vs {key:?}"
            )));
        }
    }
    Ok(())
}

fn unique_labels(configs: &[RunConfig]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(configs.len());
    for c in configs {
        let base = c.experiment.display_label();
        let mut label = base.clone();
        let mut k = 2;
        while out.contains(&label) {
            label = format!("{base}#{k}");
            k += 1;
        }
        out.push(label);
    }
    out
}

/// Paired comparison of several configs. Writes `comparison.csv` in long
/// format (`label,kind,t,mean,std_err,diff_mean,diff_std_err`) with one
/// `curve` row per step and one `jumpstart` row (t = 0) per method; diffs are
/// per-trial differences against the first config. Also writes the combined
/// `summary.csv` and one snapshot per config.
pub fn compare(configs: &mut [RunConfig], seed_block: Option<Seeds>, out: &Path) -> Result<Vec<ExperimentResult>> {
    if let Some(seeds) = seed_block {
        for c in configs.iter_mut() {
            c.experiment.seeds = seeds;
        }
    }
    check_paired(configs)?;
    let labels = unique_labels(configs);
    let tasks = configs[0].dataset.load()?;
    fs::create_dir_all(out)?;

    let mut results = Vec::with_capacity(configs.len());
    for (c, label) in configs.iter_mut().zip(&labels) {
        c.experiment.label = Some(label.clone());
        fs::write(
            out.join(format!("{}.snapshot", label.replace(['/', '#'], "_"))),
            c.to_toml()?,
        )?;
        results.push(run_experiment(&c.experiment, &tasks)?);
    }
    let mut stl_cfg = configs[0].experiment.clone();
    stl_cfg.method = Method::Stl;
    stl_cfg.label = Some("stl-baseline".into());
    let stl = run_experiment(&stl_cfg, &tasks)?;

    let reference = &results[0];
    let ref_jump = jumpstart_per_trial(reference, &stl)?;
    let mut w = csv_writer(&out.join("comparison.csv"))?;
    w.write_record(["label", "kind", "t", "mean", "std_err", "diff_mean", "diff_std_err"])
        .map_err(csv_err)?;
    for result in &results {
        let summary = result.curve_summary();
        for (t, s) in summary.iter().enumerate() {
            let diffs: Vec<f64> = result
                .trials
                .iter()
                .zip(&reference.trials)
                .map(|(a, b)| a.curve[t] - b.curve.get(t).copied().unwrap_or(f64::NAN))
                .collect();
            let d = mean_std_err(&diffs);
            w.write_record([
                result.label.clone(),
                "curve".into(),
                (t + 1).to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.std_err),
                fmt_f64(d.mean),
                fmt_f64(d.std_err),
            ])
            .map_err(csv_err)?;
        }
        let jump = jumpstart_per_trial(result, &stl)?;
        let j = mean_std_err(&jump);
        let diffs: Vec<f64> = jump.iter().zip(&ref_jump).map(|(a, b)| a - b).collect();
        let d = mean_std_err(&diffs);
        w.write_record([
            result.label.clone(),
            "jumpstart".into(),
            "0".into(),
            fmt_f64(j.mean),
            fmt_f64(j.std_err),
            fmt_f64(d.mean),
            fmt_f64(d.std_err),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    write_summary(&results.iter().collect::<Vec<_>>(), &out.join("summary.csv"))?;
    Ok(results)
}

/// `grid` verb: search the config's `[grid]` section and write `grid.csv`
/// plus `best.toml`, a runnable config carrying the winning parameters.
pub fn grid_to_dir(config: &RunConfig, out: &Path) -> Result<GridOutcome> {
    let tasks = config.dataset.load()?;
    let section = config.grid.clone().unwrap_or_default();
    let grid = section.param_grid(tasks.len());
    let outcome = grid_search(&config.experiment, &tasks, &grid, &section.validation)?;
    fs::create_dir_all(out)?;
    let mut w = csv_writer(&out.join("grid.csv"))?;
    w.write_record(["dict_size", "lambda", "mu", "rho", "score"])
        .map_err(csv_err)?;
    for cell in &outcome.cells {
        let m = &cell.config.model;
        w.write_record([
            m.dict_size.to_string(),
            fmt_f64(m.lambda),
            fmt_f64(m.mu),
            fmt_f64(m.rho),
            fmt_f64(cell.score),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let best = RunConfig {
        dataset: config.dataset.clone(),
        experiment: outcome.best.clone(),
        grid: None,
    };
    fs::write(out.join("best.toml"), best.to_toml()?)?;
    Ok(outcome)
}

/// `ingest` verb: validate a dataset and write the tasks as ingested
/// (bias included) to `data.csv`, with per-task counts in `tasks.csv`.
pub fn ingest_to_dir(manifest_path: &Path, out: &Path) -> Result<Vec<TaskData>> {
    let (manifest, tasks) = load_dataset(manifest_path)?;
    fs::create_dir_all(out)?;
    export_csv(&tasks, &out.join("data.csv"))?;
    let mut w = csv_writer(&out.join("tasks.csv"))?;
    w.write_record(["task_id", "n_instances", "n_positive"])
        .map_err(csv_err)?;
    for t in &tasks {
        let positives = match manifest.kind {
            TaskKind::Classification => t.targets.iter().filter(|&&y| y > 0.0).count().to_string(),
            TaskKind::Regression => "0".into(),
        };
        w.write_record([t.task_id.clone(), t.n_instances().to_string(), positives])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(tasks)
}
