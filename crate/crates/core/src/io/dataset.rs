//! Task-table CSV files and their TOML manifests.
//!
//! A task table has the header `task_id,y,f1,…,fd` and one row per instance.
//! Rows of a task need not be contiguous; tasks keep first-appearance order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::format::{csv_writer, fmt_f64};
use crate::error::{Error, Result};
use crate::task_model::{TaskData, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub kind: TaskKind,
    /// Task tables, relative to the manifest's directory unless absolute.
    pub files: Vec<PathBuf>,
    /// Feature columns per row, before any bias column.
    pub n_features: usize,
    /// Append a constant 1.0 feature to every instance.
    #[serde(default)]
    pub bias: bool,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut manifest: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in &mut manifest.files {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        if manifest.files.is_empty() {
            return Err(Error::Config(format!("{}: manifest lists no files", path.display())));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    /// Input dimension after the optional bias column.
    pub fn dim(&self) -> usize {
        self.n_features + usize::from(self.bias)
    }
}

struct TaskRows {
    id: String,
    features: Vec<f64>,
    targets: Vec<f64>,
}

fn parse_field(file: &Path, line: usize, text: &str) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        file: file.to_path_buf(),
        line,
        message: format!("not a number: {text:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            file: file.to_path_buf(),
            line,
            message: format!("non-finite value {text:?}"),
        });
    }
    Ok(v)
}

fn read_table(
    file: &Path,
    manifest: &DatasetManifest,
    rows: &mut Vec<TaskRows>,
    index: &mut HashMap<String, usize>,
) -> Result<()> {
    let parse_err = |line: usize, message: String| Error::Parse {
        file: file.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(file)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file".into())),
    };
    let width = 2 + manifest.n_features;
    if header.len() != width {
        return Err(Error::InconsistentWidth {
            file: file.to_path_buf(),
            line: 1,
            expected: width,
            actual: header.len(),
        });
    }
    if header.get(0) != Some("task_id") || header.get(1) != Some("y") {
        return Err(parse_err(1, "header must start with task_id,y".into()));
    }
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(Error::InconsistentWidth {
                file: file.to_path_buf(),
                line,
                expected: width,
                actual: record.len(),
            });
        }
        let id = record[0].trim();
        if id.is_empty() {
            return Err(parse_err(line, "empty task_id".into()));
        }
        let y = parse_field(file, line, &record[1])?;
        if manifest.kind == TaskKind::Classification && y != 1.0 && y != -1.0 {
            return Err(Error::UnknownLabel {
                file: file.to_path_buf(),
                line,
                label: y,
            });
        }
        let slot = *index.entry(id.to_string()).or_insert_with(|| {
            rows.push(TaskRows {
                id: id.to_string(),
                features: Vec::new(),
                targets: Vec::new(),
            });
            rows.len() - 1
        });
        let task = &mut rows[slot];
        for field in record.iter().skip(2) {
            task.features.push(parse_field(file, line, field)?);
        }
        if manifest.bias {
            task.features.push(1.0);
        }
        task.targets.push(y);
    }
    Ok(())
}

/// Read every task table named by `manifest`, grouping rows by `task_id`.
pub fn ingest_csv(manifest: &DatasetManifest) -> Result<Vec<TaskData>> {
    let mut rows = Vec::new();
    let mut index = HashMap::new();
    for file in &manifest.files {
        read_table(file, manifest, &mut rows, &mut index)?;
    }
    if rows.is_empty() {
        let file = manifest.files[0].clone();
        return Err(Error::Parse {
            file,
            line: 1,
            message: "no data rows".into(),
        });
    }
    let d = manifest.dim();
    rows.into_iter()
        .map(|r| {
            let m = r.targets.len();
            TaskData::new(
                r.id,
                manifest.kind,
                DMatrix::from_column_slice(d, m, &r.features),
                DVector::from_vec(r.targets),
            )
        })
        .collect()
}

/// Load a manifest and its tables.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<TaskData>)> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let tasks = ingest_csv(&manifest)?;
    Ok((manifest, tasks))
}

/// Write tasks as a single task table. Every column of `features` is written,
/// so a bias column already present is exported as an ordinary feature.
pub fn export_csv(tasks: &[TaskData], path: &Path) -> Result<()> {
    let d = tasks.first().map_or(0, TaskData::dim);
    let mut w = csv_writer(path)?;
    let mut header = vec!["task_id".to_string(), "y".to_string()];
    header.extend((1..=d).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for task in tasks {
        if task.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "export_csv",
                expected: d,
                actual: task.dim(),
            });
        }
        for (k, col) in task.features.column_iter().enumerate() {
            let mut rec = Vec::with_capacity(d + 2);
            rec.push(task.task_id.clone());
            rec.push(fmt_f64(task.targets[k]));
            rec.extend(col.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
