//! Single-task base learners.
//!
//! Each task is compressed into a [`TaskEncoding`]: the ridge-optimal
//! parameter `alpha` and the Hessian of the empirical loss at `alpha`. The
//! dictionary learners never look at raw task data again after this point.
//!
//! Losses are averaged over the task's `M` instances, so `ridge_reg` and the
//! Hessian have comparable magnitudes across tasks of different size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, enforce_spd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// One supervised task. `features` is `d x M`, one column per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: String,
    pub kind: TaskKind,
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl TaskData {
    pub fn new(
        task_id: impl Into<String>,
        kind: TaskKind,
        features: DMatrix<f64>,
        targets: DVector<f64>,
    ) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if features.ncols() != targets.len() {
            return Err(Error::DimensionMismatch {
                context: "task targets",
                expected: features.ncols(),
                actual: targets.len(),
            });
        }
        if !all_finite(features.iter()) || !all_finite(targets.iter()) {
            return Err(Error::NonFiniteInput("task data"));
        }
        if kind == TaskKind::Classification {
            if let Some(&bad) = targets.iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(Error::InvalidParameter(format!(
                    "classification target {bad} is not -1 or +1"
                )));
            }
        }
        Ok(Self {
            task_id: task_id.into(),
            kind,
            features,
            targets,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_instances(&self) -> usize {
        self.features.ncols()
    }

    /// Sub-task made of the given instance columns, in order.
    pub fn select(&self, columns: &[usize]) -> TaskData {
        TaskData {
            task_id: self.task_id.clone(),
            kind: self.kind,
            features: self.features.select_columns(columns),
            targets: DVector::from_iterator(columns.len(), columns.iter().map(|&c| self.targets[c])),
        }
    }
}

/// Second-order summary of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEncoding {
    pub alpha: DVector<f64>,
    /// Hessian of the empirical loss at `alpha`, ridge term excluded.
    /// Symmetric, smallest eigenvalue at least [`crate::linalg::HESSIAN_FLOOR`].
    pub hessian: DMatrix<f64>,
    pub ridge_reg: f64,
}

impl TaskEncoding {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

fn check_ridge(ridge_reg: f64) -> Result<()> {
    if ridge_reg.is_nan() || ridge_reg <= 0.0 || !ridge_reg.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ridge_reg must be positive, got {ridge_reg}"
        )));
    }
    Ok(())
}

/// Ridge regression under the averaged squared loss.
///
/// Solves `((2/M) X Xᵀ + 2γ I) α = (2/M) X y`; the encoded Hessian is
/// `(2/M) X Xᵀ`.
pub fn fit_ridge_regression(data: &TaskData, ridge_reg: f64) -> Result<TaskEncoding> {
    check_ridge(ridge_reg)?;
    if data.kind != TaskKind::Regression {
        return Err(Error::InvalidParameter(
            "fit_ridge_regression needs a regression task".into(),
        ));
    }
    if !all_finite(data.features.iter()) || !all_finite(data.targets.iter()) {
        return Err(Error::NonFiniteInput("task data"));
    }
    let x = &data.features;
    let scale = 2.0 / data.n_instances() as f64;
    let mut hessian = (x * x.transpose()) * scale;
    let rhs = (x * &data.targets) * scale;

    let mut system = hessian.clone();
    for i in 0..system.nrows() {
        system[(i, i)] += 2.0 * ridge_reg;
    }
    let alpha = system
        .cholesky()
        .ok_or_else(|| Error::SolveFailure("ridge normal equations are not positive definite".into()))?
        .solve(&rhs);
    if !all_finite(alpha.iter()) {
        return Err(Error::SolveFailure("ridge solution is not finite".into()));
    }
    enforce_spd(&mut hessian);
    Ok(TaskEncoding {
        alpha,
        hessian,
        ridge_reg,
    })
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Averaged logistic loss plus the ridge penalty.
pub fn logistic_objective(data: &TaskData, theta: &DVector<f64>, ridge_reg: f64) -> f64 {
    let margins = data.features.tr_mul(theta);
    let loss: f64 = margins
        .iter()
        .zip(data.targets.iter())
        .map(|(z, y)| softplus(-y * z))
        .sum::<f64>()
        / data.n_instances() as f64;
    loss + ridge_reg * theta.norm_squared()
}

/// Gradient of [`logistic_objective`].
pub fn logistic_gradient(data: &TaskData, theta: &DVector<f64>, ridge_reg: f64) -> DVector<f64> {
    let m = data.n_instances() as f64;
    let margins = data.features.tr_mul(theta);
    let weights = DVector::from_iterator(
        margins.len(),
        margins
            .iter()
            .zip(data.targets.iter())
            .map(|(z, y)| -y * sigmoid(-y * z) / m),
    );
    &data.features * weights + theta * (2.0 * ridge_reg)
}

/// Hessian of the averaged logistic loss (no ridge term):
/// `(1/M) Σ σ(θᵀx)(1 − σ(θᵀx)) x xᵀ`. The weight is symmetric in the sign of
/// the margin, so the label does not enter.
pub fn logistic_loss_hessian(data: &TaskData, theta: &DVector<f64>) -> DMatrix<f64> {
    let m = data.n_instances() as f64;
    let margins = data.features.tr_mul(theta);
    let mut weighted = data.features.clone();
    for (mut col, z) in weighted.column_iter_mut().zip(margins.iter()) {
        let p = sigmoid(*z);
        col *= p * (1.0 - p) / m;
    }
    weighted * data.features.transpose()
}

/// L2-regularized logistic regression by damped Newton.
///
/// Steps are halved until the Armijo condition holds. On failure to reach
/// `opts.tol` the error carries the last iterate.
pub fn fit_logistic(data: &TaskData, ridge_reg: f64, opts: NewtonOptions) -> Result<TaskEncoding> {
    check_ridge(ridge_reg)?;
    if data.kind != TaskKind::Classification {
        return Err(Error::InvalidParameter(
            "fit_logistic needs a classification task".into(),
        ));
    }
    if !all_finite(data.features.iter()) || !all_finite(data.targets.iter()) {
        return Err(Error::NonFiniteInput("task data"));
    }
    let d = data.dim();
    let mut theta = DVector::zeros(d);
    let mut value = logistic_objective(data, &theta, ridge_reg);
    let mut grad = logistic_gradient(data, &theta, ridge_reg);
    let mut iterations = 0;

    while grad.norm() > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: grad.norm(),
                last: theta,
            });
        }
        iterations += 1;

        let mut h = logistic_loss_hessian(data, &theta);
        for i in 0..d {
            h[(i, i)] += 2.0 * ridge_reg;
        }
        let direction = h
            .cholesky()
            .ok_or_else(|| Error::SolveFailure("Newton system is not positive definite".into()))?
            .solve(&grad);
        let decrease = grad.dot(&direction);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &theta - &direction * step;
            let cand_value = logistic_objective(data, &candidate, ridge_reg);
            // Slack absorbs round-off once the decrease is below machine precision.
            let slack = 1e-14 * value.abs().max(1.0);
            if cand_value <= value - 1e-4 * step * decrease + slack {
                accepted = Some((candidate, cand_value));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_value)) = accepted else {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: grad.norm(),
                last: theta,
            });
        };
        theta = next;
        value = next_value;
        grad = logistic_gradient(data, &theta, ridge_reg);
    }

    let mut hessian = logistic_loss_hessian(data, &theta);
    enforce_spd(&mut hessian);
    Ok(TaskEncoding {
        alpha: theta,
        hessian,
        ridge_reg,
    })
}

/// Dispatch on the task kind.
pub fn fit_task(data: &TaskData, ridge_reg: f64, opts: NewtonOptions) -> Result<TaskEncoding> {
    match data.kind {
        TaskKind::Regression => fit_ridge_regression(data, ridge_reg),
        TaskKind::Classification => fit_logistic(data, ridge_reg, opts),
    }
}

/// Linear score `θᵀx`.
pub fn score(theta: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    if theta.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "predict",
            expected: theta.len(),
            actual: x.len(),
        });
    }
    Ok(theta.dot(x))
}

/// Regression: `θᵀx`. Classification: `sign(θᵀx)` with `sign(0) = +1`.
/// Use [`score`] for the raw ranking score.
pub fn predict(theta: &DVector<f64>, x: &DVector<f64>, kind: TaskKind) -> Result<f64> {
    let s = score(theta, x)?;
    Ok(match kind {
        TaskKind::Regression => s,
        TaskKind::Classification => {
            if s >= 0.0 {
                1.0
            } else {
                -1.0
            }
        }
    })
}

/// Scores for every instance column of `data`.
pub fn scores(theta: &DVector<f64>, data: &TaskData) -> Result<DVector<f64>> {
    if theta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            context: "predict",
            expected: data.dim(),
            actual: theta.len(),
        });
    }
    Ok(data.features.tr_mul(theta))
}
