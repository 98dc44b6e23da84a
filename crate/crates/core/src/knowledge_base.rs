//! Per-agent dictionary state and the closed-form local dictionary solve.
//!
//! With codes held fixed, each task contributes the quadratic
//! `‖α − L s‖²_Γ` to its agent's objective. Under column-stacking `vec`,
//! `vec(Γ L s sᵀ) = (s sᵀ ⊗ Γ) vec(L)`, so an agent only needs the running
//! sums `A = Σ (s sᵀ) ⊗ Γ` and `b = Σ vec(Γ α sᵀ)` to solve for its
//! dictionary. Each task is accumulated exactly once.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{mat_of, min_eigenvalue, vec_of};
use crate::task_model::TaskEncoding;

/// A `d x u` dictionary whose columns are latent basis models.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub dict: DMatrix<f64>,
}

impl KnowledgeBase {
    pub fn new(dict: DMatrix<f64>) -> Self {
        Self { dict }
    }

    pub fn zeros(d: usize, u: usize) -> Self {
        Self {
            dict: DMatrix::zeros(d, u),
        }
    }

    pub fn dim(&self) -> usize {
        self.dict.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.dict.ncols()
    }

    /// Task parameter `θ = L s`.
    pub fn compose(&self, code: &DVector<f64>) -> DVector<f64> {
        &self.dict * code
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    d: usize,
    u: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    task_count: usize,
}

impl Accumulator {
    pub fn new(d: usize, u: usize) -> Self {
        Self {
            d,
            u,
            a: DMatrix::zeros(d * u, d * u),
            b: DVector::zeros(d * u),
            task_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_atoms(&self) -> usize {
        self.u
    }

    /// `Σ (s sᵀ) ⊗ Γ`, size `du x du`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `Σ vec(Γ α sᵀ)`, length `du`.
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    /// Fold one coded task into the running sums.
    pub fn accumulate(&mut self, code: &DVector<f64>, enc: &TaskEncoding) -> Result<()> {
        if code.len() != self.u {
            return Err(Error::DimensionMismatch {
                context: "code length vs dictionary columns",
                expected: self.u,
                actual: code.len(),
            });
        }
        if enc.dim() != self.d {
            return Err(Error::DimensionMismatch {
                context: "task dimension vs dictionary rows",
                expected: self.d,
                actual: enc.dim(),
            });
        }
        let d = self.d;
        let gamma_alpha = &enc.hessian * &enc.alpha;
        for q in 0..self.u {
            if code[q] == 0.0 {
                continue;
            }
            for p in 0..self.u {
                let w = code[p] * code[q];
                if w != 0.0 {
                    let mut block = self.a.view_mut((p * d, q * d), (d, d));
                    block += &enc.hessian * w;
                }
            }
            let mut seg = self.b.rows_mut(q * d, d);
            seg.axpy(code[q], &gamma_alpha, 1.0);
        }
        self.task_count += 1;
        Ok(())
    }

    /// Sum of `(1/T_i) A_i` and `(1/T_i) b_i` over several accumulators, as
    /// a single accumulator with `task_count = 1`. Empty accumulators add
    /// nothing.
    pub fn pooled_average(parts: &[Accumulator]) -> Result<Accumulator> {
        let first = parts.first().ok_or(Error::EmptyInput)?;
        let mut pooled = Accumulator::new(first.d, first.u);
        for p in parts {
            if p.d != first.d || p.u != first.u {
                return Err(Error::DimensionMismatch {
                    context: "pooled accumulator shape",
                    expected: first.d * first.u,
                    actual: p.d * p.u,
                });
            }
            if p.task_count > 0 {
                let inv = 1.0 / p.task_count as f64;
                pooled.a += &p.a * inv;
                pooled.b += &p.b * inv;
            }
        }
        pooled.task_count = 1;
        Ok(pooled)
    }

    /// Prepare the symmetric positive definite system
    /// `(ρ/2·deg + λ) I + A/T` for repeated solves.
    pub fn factor(&self, degree: usize, rho: f64, lambda: f64) -> Result<LocalSystem> {
        if lambda.is_nan() || lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if rho.is_nan() || rho < 0.0 || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho must be non-negative, got {rho}")));
        }
        let n = self.d * self.u;
        let shift = 0.5 * rho * degree as f64 + lambda;
        let (mut system, rhs_tasks) = if self.task_count > 0 {
            let inv = 1.0 / self.task_count as f64;
            (&self.a * inv, &self.b * inv)
        } else {
            (DMatrix::zeros(n, n), DVector::zeros(n))
        };
        for i in 0..n {
            system[(i, i)] += shift;
        }
        let chol = system
            .cholesky()
            .ok_or_else(|| Error::SolveFailure("local dictionary system is not positive definite".into()))?;
        Ok(LocalSystem {
            d: self.d,
            u: self.u,
            degree,
            rho,
            chol,
            rhs_tasks,
        })
    }

    /// Smallest eigenvalue of `A/T` (0 with no tasks).
    pub fn min_eigenvalue_averaged(&self) -> f64 {
        if self.task_count == 0 {
            return 0.0;
        }
        min_eigenvalue(&(&self.a / self.task_count as f64))
    }
}

/// Network terms entering one agent's dictionary solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSummary {
    /// `Σ_l H_{l,i} Z_l` over edges incident to the agent.
    pub dual_aggregate: DMatrix<f64>,
    /// `Σ_{j ∈ N(i)} L_j`, freshest copies.
    pub neighbor_sum: DMatrix<f64>,
    pub degree: usize,
}

impl NeighborSummary {
    pub fn isolated(d: usize, u: usize) -> Self {
        Self {
            dual_aggregate: DMatrix::zeros(d, u),
            neighbor_sum: DMatrix::zeros(d, u),
            degree: 0,
        }
    }
}

/// A factored local system, reusable for every solve within an ADMM round.
#[derive(Debug, Clone)]
pub struct LocalSystem {
    d: usize,
    u: usize,
    degree: usize,
    rho: f64,
    chol: Cholesky<f64, Dyn>,
    rhs_tasks: DVector<f64>,
}

impl LocalSystem {
    pub fn solve(&self, summary: &NeighborSummary) -> Result<KnowledgeBase> {
        if summary.degree != self.degree {
            return Err(Error::InvalidParameter(format!(
                "neighbor summary degree {} does not match factored degree {}",
                summary.degree, self.degree
            )));
        }
        let rhs = if self.degree == 0 {
            self.rhs_tasks.clone()
        } else {
            let network = &summary.neighbor_sum * (0.5 * self.rho) - &summary.dual_aggregate * 0.5;
            &self.rhs_tasks + vec_of(&network)
        };
        let x = self.chol.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolveFailure(
                "local dictionary solve produced non-finite values".into(),
            ));
        }
        Ok(KnowledgeBase::new(mat_of(&x, self.d, self.u)))
    }
}

/// Closed-form minimizer of one agent's augmented-Lagrangian term:
/// `mat(((ρ/2·deg + λ) I + A/T)⁻¹ (b/T + vec(ρ/2 Σ L_j − ½ Σ H_{l,i} Z_l)))`.
pub fn solve_local_dictionary(
    acc: &Accumulator,
    summary: &NeighborSummary,
    rho: f64,
    lambda: f64,
) -> Result<KnowledgeBase> {
    acc.factor(summary.degree, rho, lambda)?.solve(summary)
}

/// Single-agent update: no neighbors, no penalty.
pub fn ella_update(acc: &Accumulator, lambda: f64) -> Result<KnowledgeBase> {
    solve_local_dictionary(acc, &NeighborSummary::isolated(acc.d, acc.u), 0.0, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn random_enc(rng: &mut ChaCha8Rng, d: usize) -> TaskEncoding {
        let b = DMatrix::from_fn(d, d, |_, _| normal(rng));
        TaskEncoding {
            alpha: DVector::from_fn(d, |_, _| normal(rng)),
            hessian: &b * b.transpose() + DMatrix::identity(d, d) * 0.1,
            ridge_reg: 1.0,
        }
    }

    #[test]
    fn zero_code_only_bumps_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = Accumulator::new(3, 2);
        acc.accumulate(&DVector::zeros(2), &random_enc(&mut rng, 3)).unwrap();
        assert_eq!(acc.task_count(), 1);
        assert_eq!(acc.a(), &DMatrix::zeros(6, 6));
        assert_eq!(acc.b(), &DVector::zeros(6));
    }

    #[test]
    fn unit_code_fills_leading_block() {
        let mut acc = Accumulator::new(3, 2);
        let enc = TaskEncoding {
            alpha: DVector::from_vec(vec![1.0, 0.0, 0.0]),
            hessian: DMatrix::identity(3, 3),
            ridge_reg: 1.0,
        };
        acc.accumulate(&DVector::from_vec(vec![1.0, 0.0]), &enc).unwrap();
        let mut expected = DMatrix::zeros(6, 6);
        expected.view_mut((0, 0), (3, 3)).fill_with_identity();
        assert_eq!(acc.a(), &expected);
        let mut eb = DVector::zeros(6);
        eb[0] = 1.0;
        assert_eq!(acc.b(), &eb);
    }

    #[test]
    fn kronecker_vec_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, u) = (3, 2);
        let enc = random_enc(&mut rng, d);
        let s = DVector::from_fn(u, |_, _| normal(&mut rng));
        let l = DMatrix::from_fn(d, u, |_, _| normal(&mut rng));
        let mut acc = Accumulator::new(d, u);
        acc.accumulate(&s, &enc).unwrap();
        let lhs = acc.a() * vec_of(&l);
        let rhs = vec_of(&(&enc.hessian * &l * &s * s.transpose()));
        assert!((lhs - rhs).amax() < 1e-10);
        let b_direct = vec_of(&(&enc.hessian * &enc.alpha * s.transpose()));
        assert!((acc.b() - b_direct).amax() < 1e-12);
    }

    #[test]
    fn accumulate_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut acc = Accumulator::new(3, 2);
        assert!(acc.accumulate(&DVector::zeros(3), &random_enc(&mut rng, 3)).is_err());
        assert!(acc.accumulate(&DVector::zeros(2), &random_enc(&mut rng, 4)).is_err());
        assert_eq!(acc.task_count(), 0);
    }

    #[test]
    fn single_task_solve_matches_gradient_descent() {
        let alpha = DVector::from_vec(vec![0.7, -1.1, 0.4]);
        let enc = TaskEncoding {
            alpha: alpha.clone(),
            hessian: DMatrix::identity(3, 3),
            ridge_reg: 1.0,
        };
        let s = DVector::from_vec(vec![1.0, 0.0]);
        let lambda = 0.3;
        let mut acc = Accumulator::new(3, 2);
        acc.accumulate(&s, &enc).unwrap();
        let kb = ella_update(&acc, lambda).unwrap();

        // Minimize ‖α − L s‖² + λ‖L‖²_F by gradient descent.
        let mut l = DMatrix::<f64>::zeros(3, 2);
        for _ in 0..100_000 {
            let g = (&l * &s - &alpha) * s.transpose() * 2.0 + &l * (2.0 * lambda);
            if g.amax() < 1e-12 {
                break;
            }
            l -= g * 0.2;
        }
        assert!((&kb.dict - &l).amax() < 1e-6);
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut acc = Accumulator::new(3, 2);
        acc.accumulate(&DVector::from_vec(vec![1.0, -0.5]), &random_enc(&mut rng, 3))
            .unwrap();
        let kb = ella_update(&acc, 1e12).unwrap();
        assert!(kb.dict.amax() < 1e-9);
    }

    #[test]
    fn no_tasks_no_neighbors_returns_zero() {
        let acc = Accumulator::new(2, 2);
        assert_eq!(ella_update(&acc, 1.0).unwrap().dict, DMatrix::zeros(2, 2));
    }

    #[test]
    fn system_min_eigenvalue_is_at_least_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut acc = Accumulator::new(3, 2);
        for _ in 0..3 {
            let s = DVector::from_fn(2, |_, _| normal(&mut rng));
            acc.accumulate(&s, &random_enc(&mut rng, 3)).unwrap();
        }
        let lambda = 0.25;
        let mut system = acc.a() / 3.0;
        for i in 0..6 {
            system[(i, i)] += lambda;
        }
        assert!(min_eigenvalue(&system) >= lambda - 1e-12);
    }

    #[test]
    fn solve_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut acc = Accumulator::new(3, 2);
        acc.accumulate(&DVector::from_vec(vec![0.4, 1.0]), &random_enc(&mut rng, 3))
            .unwrap();
        let summary = NeighborSummary {
            dual_aggregate: DMatrix::from_fn(3, 2, |_, _| normal(&mut rng)),
            neighbor_sum: DMatrix::from_fn(3, 2, |_, _| normal(&mut rng)),
            degree: 2,
        };
        let a = solve_local_dictionary(&acc, &summary, 0.5, 0.1).unwrap();
        let b = solve_local_dictionary(&acc, &summary, 0.5, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_positive_lambda() {
        let acc = Accumulator::new(2, 2);
        assert!(matches!(ella_update(&acc, 0.0), Err(Error::InvalidParameter(_))));
    }
}
