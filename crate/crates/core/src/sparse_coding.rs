//! Hessian-weighted LASSO: the sparse code of one task against a dictionary.
//!
//! Minimizes `‖α − L s‖²_Γ + μ‖s‖₁`. The Hessian is factored as `Γ = Rᵀ R`,
//! which turns the problem into an ordinary LASSO on `(R α, R L)`, solved by
//! cyclic coordinate descent with soft-thresholding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task_model::TaskEncoding;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub s: DVector<f64>,
    /// Indices `j` with `s[j] != 0`, ascending.
    pub support: Vec<usize>,
    pub objective_value: f64,
}

impl SparseCode {
    /// Build a code and fill in its support and objective.
    pub fn evaluate(dict: &DMatrix<f64>, enc: &TaskEncoding, mu: f64, s: DVector<f64>) -> Self {
        let support = s
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        let objective_value = lasso_objective(dict, enc, mu, &s);
        Self {
            s,
            support,
            objective_value,
        }
    }

    pub fn zeros(u: usize) -> Self {
        Self {
            s: DVector::zeros(u),
            support: Vec::new(),
            objective_value: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoOptions {
    /// Convergence threshold on [`kkt_residual`].
    pub tol: f64,
    /// Cap on full coordinate sweeps.
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// `‖α − L s‖²_Γ + μ‖s‖₁`.
pub fn lasso_objective(dict: &DMatrix<f64>, enc: &TaskEncoding, mu: f64, s: &DVector<f64>) -> f64 {
    let r = &enc.alpha - dict * s;
    r.dot(&(&enc.hessian * &r)) + mu * s.lp_norm(1)
}

fn check_dims(dict: &DMatrix<f64>, enc: &TaskEncoding, s_len: Option<usize>) -> Result<()> {
    if dict.nrows() != enc.dim() {
        return Err(Error::DimensionMismatch {
            context: "dictionary rows vs task dimension",
            expected: enc.dim(),
            actual: dict.nrows(),
        });
    }
    if dict.ncols() == 0 {
        return Err(Error::InvalidParameter("dictionary has no columns".into()));
    }
    if let Some(len) = s_len {
        if len != dict.ncols() {
            return Err(Error::DimensionMismatch {
                context: "code length vs dictionary columns",
                expected: dict.ncols(),
                actual: len,
            });
        }
    }
    Ok(())
}

/// Largest violation of the subgradient optimality conditions at `s`.
///
/// With `g = 2 Lᵀ Γ (L s − α)`: on the support the condition is
/// `g_j + μ sign(s_j) = 0`; off it, `|g_j| ≤ μ`.
pub fn kkt_residual(dict: &DMatrix<f64>, enc: &TaskEncoding, mu: f64, s: &DVector<f64>) -> Result<f64> {
    check_dims(dict, enc, Some(s.len()))?;
    let g = dict.tr_mul(&(&enc.hessian * (dict * s - &enc.alpha))) * 2.0;
    Ok(g.iter()
        .zip(s.iter())
        .map(|(gj, sj)| {
            if *sj != 0.0 {
                (gj + mu * sj.signum()).abs()
            } else {
                (gj.abs() - mu).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn face_objective(design: &DMatrix<f64>, target: &DVector<f64>, half_mu: f64, s: &DVector<f64>) -> f64 {
    (target - design * s).norm_squared() + 2.0 * half_mu * s.lp_norm(1)
}

/// Active set of `s` with dependent atoms pruned. While the active columns
/// of `design` have a null vector, move along it in the direction that does
/// not increase the ℓ1 norm until a coordinate reaches zero. The fit is
/// unchanged, so the objective cannot go up.
fn purify(design: &DMatrix<f64>, s: &mut DVector<f64>) -> Vec<usize> {
    loop {
        let active: Vec<usize> = (0..s.len()).filter(|&j| s[j] != 0.0).collect();
        if active.is_empty() {
            return active;
        }
        // Pad to square so the SVD exposes every null direction.
        let rows = design.nrows().max(active.len());
        let mut sub = DMatrix::zeros(rows, active.len());
        sub.rows_mut(0, design.nrows())
            .copy_from(&design.select_columns(&active));
        let svd = sub.svd(false, true);
        let sv = &svd.singular_values;
        let k = sv.imin();
        if sv[k] > sv.max() * 1e-10 {
            return active;
        }
        let mut n = svd.v_t.as_ref().unwrap().row(k).transpose();
        let signs: f64 = active.iter().zip(n.iter()).map(|(&j, nk)| s[j].signum() * nk).sum();
        if signs > 0.0 {
            n = -n;
        }
        let Some((tau, hit)) = active
            .iter()
            .enumerate()
            .filter(|&(k, &j)| s[j] * n[k] < 0.0)
            .map(|(k, &j)| (-s[j] / n[k], k))
            .min_by(|a, b| a.0.total_cmp(&b.0))
        else {
            return active;
        };
        for (k, &j) in active.iter().enumerate() {
            s[j] = if k == hit { 0.0 } else { s[j] + tau * n[k] };
        }
    }
}

/// Feature-sign step on the orthant face fixed by the signs of `s`: after
/// pruning dependent atoms, move to the best of the face minimizer and the
/// zero crossings on the way to it. Coordinate descent alone can crawl along
/// flat valleys of overcomplete dictionaries for thousands of sweeps.
fn face_step(design: &DMatrix<f64>, target: &DVector<f64>, half_mu: f64, s: &DVector<f64>) -> Option<DVector<f64>> {
    let before = face_objective(design, target, half_mu, s);
    let mut base = s.clone();
    let active = purify(design, &mut base);
    if active.is_empty() {
        return None;
    }
    let sub = design.select_columns(&active);
    let x = DVector::from_iterator(active.len(), active.iter().map(|&j| base[j]));
    let rhs = sub.tr_mul(target) - x.map(f64::signum) * half_mu;
    let z = sub.tr_mul(&sub).cholesky()?.solve(&rhs);
    let dir = &z - &x;

    let point = |tau: f64, zero: Option<usize>| {
        let mut out = base.clone();
        for (k, &j) in active.iter().enumerate() {
            out[j] = if Some(k) == zero { 0.0 } else { x[k] + tau * dir[k] };
        }
        out
    };
    let mut best = point(1.0, None);
    let mut best_f = face_objective(design, target, half_mu, &best);
    for k in (0..x.len()).filter(|&k| x[k] * dir[k] < 0.0) {
        let tau = -x[k] / dir[k];
        if tau < 1.0 {
            let p = point(tau, Some(k));
            let f = face_objective(design, target, half_mu, &p);
            if f < best_f {
                best = p;
                best_f = f;
            }
        }
    }
    (best_f <= before).then_some(best)
}

/// Solve the weighted LASSO from `warm_start` (zeros when `None`).
///
/// Stops when the KKT residual drops to `opts.tol`. Hitting `opts.max_iter`
/// returns [`Error::MaxIterReached`] carrying the last iterate; callers may
/// choose to keep it.
pub fn solve_weighted_lasso(
    dict: &DMatrix<f64>,
    enc: &TaskEncoding,
    mu: f64,
    opts: LassoOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<SparseCode> {
    check_dims(dict, enc, warm_start.map(|w| w.len()))?;
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::InvalidParameter(format!("mu must be non-negative, got {mu}")));
    }
    let u = dict.ncols();
    let chol = enc.hessian.clone().cholesky().ok_or(Error::CholeskyFailure)?;
    // Γ = C Cᵀ with C lower triangular, so R = Cᵀ.
    let r = chol.l().transpose();
    let target = &r * &enc.alpha;
    let design = &r * dict;
    let col_sq: Vec<f64> = design.column_iter().map(|c| c.norm_squared()).collect();

    let mut s = warm_start.cloned().unwrap_or_else(|| DVector::zeros(u));
    let mut resid = &target - &design * &s;
    let half_mu = 0.5 * mu;

    let mut sweeps = 0;
    loop {
        let residual = kkt_residual(dict, enc, mu, &s)?;
        if residual <= opts.tol {
            break;
        }
        if sweeps == opts.max_iter {
            return Err(Error::MaxIterReached {
                residual,
                code: Box::new(SparseCode::evaluate(dict, enc, mu, s)),
            });
        }
        sweeps += 1;
        for j in 0..u {
            if col_sq[j] == 0.0 {
                if s[j] != 0.0 {
                    s[j] = 0.0;
                }
                continue;
            }
            let col = design.column(j);
            let old = s[j];
            let rho = col.dot(&resid) + col_sq[j] * old;
            let new = soft_threshold(rho, half_mu) / col_sq[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                s[j] = new;
            }
        }
        if let Some(polished) = face_step(&design, &target, half_mu, &s) {
            s = polished;
        }
        // Re-anchor the running residual once per sweep to stop drift.
        resid = &target - &design * &s;
    }
    Ok(SparseCode::evaluate(dict, enc, mu, s))
}

/// Keep the flagged last iterate of a capped solve, with a warning.
pub fn accept_capped(result: Result<SparseCode>) -> Result<SparseCode> {
    match result {
        Err(Error::MaxIterReached { residual, code }) => {
            log::warn!("sparse coding stopped at the sweep cap with KKT residual {residual:e}");
            Ok(*code)
        }
        other => other,
    }
}
