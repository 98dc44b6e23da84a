//! Synthetic task families with a planted sparse dictionary.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{csv_err, export_csv, DatasetManifest};
use super::format::{csv_writer, fmt_f64};
use crate::error::{Error, Result};
use crate::task_model::{TaskData, TaskKind};

fn default_kind() -> TaskKind {
    TaskKind::Regression
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub d: usize,
    pub u_true: usize,
    pub n_tasks: usize,
    /// Agents the tasks are meant to be spread over; only checked for feasibility.
    pub n_agents: usize,
    pub instances_per_task: usize,
    pub noise_sd: f64,
    /// Nonzeros per planted code.
    pub sparsity: usize,
    pub seed: u64,
    /// Classification labels are the signs of the noisy linear responses.
    #[serde(default = "default_kind")]
    pub kind: TaskKind,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if self.d == 0 || self.u_true == 0 || self.n_tasks == 0 {
            return bad("d, u_true and n_tasks must be positive".into());
        }
        if self.sparsity == 0 || self.sparsity > self.u_true {
            return bad(format!("sparsity {} must lie in 1..={}", self.sparsity, self.u_true));
        }
        if self.n_agents == 0 || self.n_agents > self.n_tasks {
            return bad(format!("{} agents cannot share {} tasks", self.n_agents, self.n_tasks));
        }
        if self.instances_per_task < 2 {
            return bad("instances_per_task must be at least 2".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd {} must be finite and non-negative", self.noise_sd));
        }
        Ok(())
    }
}

/// Generated tasks with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub tasks: Vec<TaskData>,
    /// Planted `d × u_true` dictionary with unit-norm columns.
    pub dictionary: DMatrix<f64>,
    pub codes: Vec<DVector<f64>>,
}

impl SynthData {
    pub fn theta(&self, task: usize) -> DVector<f64> {
        &self.dictionary * &self.codes[task]
    }
}

pub fn task_name(k: usize) -> String {
    format!("task{k:04}")
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    let mut dictionary = DMatrix::from_fn(spec.d, spec.u_true, |_, _| normal(&mut rng));
    for mut col in dictionary.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        } else {
            col[0] = 1.0;
        }
    }
    let mut codes = Vec::with_capacity(spec.n_tasks);
    let mut tasks = Vec::with_capacity(spec.n_tasks);
    for k in 0..spec.n_tasks {
        let mut s = DVector::zeros(spec.u_true);
        for j in sample(&mut rng, spec.u_true, spec.sparsity) {
            let magnitude = rng.random_range(0.5..=1.5);
            s[j] = if rng.random::<bool>() { magnitude } else { -magnitude };
        }
        let theta = &dictionary * &s;
        let x = DMatrix::from_fn(spec.d, spec.instances_per_task, |_, _| normal(&mut rng));
        let mut y = x.tr_mul(&theta);
        for v in y.iter_mut() {
            *v += spec.noise_sd * normal(&mut rng);
            if spec.kind == TaskKind::Classification {
                *v = if *v >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        tasks.push(TaskData::new(task_name(k), spec.kind, x, y)?);
        codes.push(s);
    }
    Ok(SynthData {
        tasks,
        dictionary,
        codes,
    })
}

/// Write `data.csv`, `manifest.toml`, `spec.toml` and the ground truth
/// (`truth_dictionary.csv`, `truth_codes.csv`) into `dir`.
pub fn write_synth(spec: &SynthSpec, dir: &Path) -> Result<SynthData> {
    let data = synth_generate(spec)?;
    fs::create_dir_all(dir)?;
    export_csv(&data.tasks, &dir.join("data.csv"))?;
    DatasetManifest {
        name: format!("synth-{}", spec.seed),
        kind: spec.kind,
        files: vec!["data.csv".into()],
        n_features: spec.d,
        bias: false,
    }
    .save(&dir.join("manifest.toml"))?;
    fs::write(
        dir.join("spec.toml"),
        toml::to_string(spec).map_err(|e| Error::BadSpec(e.to_string()))?,
    )?;

    let mut w = csv_writer(&dir.join("truth_dictionary.csv"))?;
    let header: Vec<String> = (1..=spec.u_true).map(|j| format!("l{j}")).collect();
    w.write_record(&header).map_err(csv_err)?;
    for row in data.dictionary.row_iter() {
        w.write_record(row.iter().map(|&v| fmt_f64(v))).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("truth_codes.csv"))?;
    let mut header = vec!["task_id".to_string()];
    header.extend((1..=spec.u_true).map(|j| format!("s{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (task, s) in data.tasks.iter().zip(&data.codes) {
        let mut rec = vec![task.task_id.clone()];
        rec.extend(s.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::rmse;
    use crate::task_model::{fit_ridge_regression, scores};

    fn spec() -> SynthSpec {
        SynthSpec {
            d: 5,
            u_true: 3,
            n_tasks: 6,
            n_agents: 2,
            instances_per_task: 20,
            noise_sd: 0.0,
            sparsity: 2,
            seed: 11,
            kind: TaskKind::Regression,
        }
    }

    #[test]
    fn planted_structure() {
        let data = synth_generate(&spec()).unwrap();
        for col in data.dictionary.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
        for s in &data.codes {
            let nz: Vec<f64> = s.iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nz.len(), 2);
            assert!(nz.iter().all(|v| (0.5..=1.5).contains(&v.abs())));
        }
    }

    #[test]
    fn noiseless_tasks_are_fit_exactly() {
        let data = synth_generate(&spec()).unwrap();
        for task in &data.tasks {
            let train = task.select(&(0..10).collect::<Vec<_>>());
            let test = task.select(&(10..20).collect::<Vec<_>>());
            let enc = fit_ridge_regression(&train, 1e-8).unwrap();
            let pred = scores(&enc.alpha, &test).unwrap();
            assert!(rmse(pred.as_slice(), test.targets.as_slice()).unwrap() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_synth(&spec(), a.path()).unwrap();
        write_synth(&spec(), b.path()).unwrap();
        for f in [
            "data.csv",
            "manifest.toml",
            "truth_dictionary.csv",
            "truth_codes.csv",
            "spec.toml",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = spec();
        s.sparsity = 4;
        assert!(matches!(synth_generate(&s), Err(Error::BadSpec(_))));
        let mut s = spec();
        s.n_agents = 7;
        assert!(matches!(synth_generate(&s), Err(Error::BadSpec(_))));
        let mut s = spec();
        s.noise_sd = f64::NAN;
        assert!(matches!(synth_generate(&s), Err(Error::BadSpec(_))));
    }
}
