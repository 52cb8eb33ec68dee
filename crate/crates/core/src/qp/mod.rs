//! Convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀ Q x + qᵀ x
//! subject to  l <= A x <= u
//! ```
//!
//! solved with the operator-splitting ADMM scheme popularized by OSQP: Ruiz
//! equilibration, a quasi-definite KKT system, step size ρ (stiffer on
//! equality rows, optionally adapted to the residual balance with a
//! refactorization), over-relaxation and an active-set polishing step that is
//! also tried periodically as an early exit. Equality rows are encoded as
//! `l = u`.

mod admm;
mod ldl;
mod sparse;

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub use admm::solve;
pub use sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("row {row}: lower bound {lower} exceeds upper bound {upper}")]
    InvalidBounds { row: usize, lower: f64, upper: f64 },
    #[error("cost matrix is not positive semi-definite (pivot {pivot})")]
    NotPositiveSemidefinite { pivot: usize },
    #[error("KKT factorization failed at pivot {pivot}")]
    Factorization { pivot: usize },
    #[error("invalid setting: {0}")]
    InvalidSettings(&'static str),
    #[error("non-finite problem data")]
    NonFinite,
}

/// Problem data. `Q` is symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    cost: SparseMatrix,
    linear: DVector<f64>,
    constraints: SparseMatrix,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        cost: SparseMatrix,
        linear: DVector<f64>,
        constraints: SparseMatrix,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = cost.nrows();
        if cost.ncols() != n {
            return Err(QpError::DimensionMismatch("Q must be square"));
        }
        if linear.len() != n {
            return Err(QpError::DimensionMismatch("q length differs from Q"));
        }
        if constraints.ncols() != n {
            return Err(QpError::DimensionMismatch("A column count differs from Q"));
        }
        let m = constraints.nrows();
        if lower.len() != m || upper.len() != m {
            return Err(QpError::DimensionMismatch("bound length differs from A rows"));
        }
        if cost.iter().any(|(_, _, v)| !v.is_finite())
            || constraints.iter().any(|(_, _, v)| !v.is_finite())
            || linear.iter().any(|v| !v.is_finite())
            || lower.iter().chain(upper.iter()).any(|v| v.is_nan())
        {
            return Err(QpError::NonFinite);
        }
        for row in 0..m {
            if lower[row] > upper[row] {
                return Err(QpError::InvalidBounds { row, lower: lower[row], upper: upper[row] });
            }
        }
        let triplets: Vec<_> = cost
            .iter()
            .flat_map(|(r, c, v)| [(r, c, 0.5 * v), (c, r, 0.5 * v)])
            .collect();
        let cost = SparseMatrix::from_triplets(n, n, &triplets);
        Ok(Self { cost, linear, constraints, lower, upper })
    }

    pub fn from_dense(
        cost: &DMatrix<f64>,
        linear: DVector<f64>,
        constraints: &DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self, QpError> {
        Self::new(
            SparseMatrix::from_dense(cost),
            linear,
            SparseMatrix::from_dense(constraints),
            lower,
            upper,
        )
    }

    pub fn num_variables(&self) -> usize {
        self.cost.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn cost(&self) -> &SparseMatrix {
        &self.cost
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constraints(&self) -> &SparseMatrix {
        &self.constraints
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn is_equality(&self, row: usize) -> bool {
        self.lower[row] == self.upper[row]
    }

    /// `½ xᵀQx + qᵀx`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.cost.mul_vec(x)) + self.linear.dot(x)
    }
}

/// Starting point for the iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Certificate tolerance for primal infeasibility.
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub rho: f64,
    /// Rescale `rho` from the residual balance, refactoring the KKT system
    /// when the estimate moves by more than a factor of five.
    pub adaptive_rho: bool,
    pub sigma: f64,
    pub alpha: f64,
    /// Ratio between the step size on equality rows and `rho`.
    pub equality_rho_scale: f64,
    /// Ruiz equilibration passes; 0 disables scaling.
    pub scaling_iterations: usize,
    /// Residuals are evaluated every `check_interval` iterations.
    pub check_interval: usize,
    /// Iterations without primal progress before an infeasibility
    /// certificate is trusted.
    pub stagnation_window: usize,
    pub polish: bool,
    pub polish_refinement_steps: usize,
    pub warm_start: Option<WarmStart>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            eps_infeasible: 1e-5,
            max_iter: 4000,
            rho: 0.1,
            adaptive_rho: true,
            sigma: 1e-6,
            alpha: 1.6,
            equality_rho_scale: 1e3,
            scaling_iterations: 10,
            check_interval: 5,
            stagnation_window: 200,
            polish: true,
            polish_refinement_steps: 5,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIterations => "max-iterations",
            QpStatus::PrimalInfeasible => "primal-infeasible-detected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// `‖Ax − clamp(Ax, l, u)‖∞` at `x`.
    pub primal_residual: f64,
    /// `‖Qx + q + Aᵀy‖∞` at `(x, y)`.
    pub dual_residual: f64,
    /// Thresholds the residuals were compared against.
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub objective: f64,
    pub polished: bool,
    /// Wall-clock seconds; the core crate has no clock and leaves this at
    /// zero, timed wrappers fill it in.
    pub solve_time: f64,
}

/// Primal and dual KKT residuals of a candidate `(x, y)`.
pub fn kkt_residuals(
    prob: &QpProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(f64, f64), QpError> {
    if x.len() != prob.num_variables() {
        return Err(QpError::DimensionMismatch("x length differs from problem"));
    }
    if y.len() != prob.num_constraints() {
        return Err(QpError::DimensionMismatch("y length differs from problem"));
    }
    let ax = prob.constraints.mul_vec(x);
    let primal = ax
        .iter()
        .zip(prob.lower.iter().zip(prob.upper.iter()))
        .map(|(&v, (&l, &u))| (v - v.clamp(l, u)).abs())
        .fold(0.0, f64::max);
    let stationarity = prob.cost.mul_vec(x) + &prob.linear + prob.constraints.tr_mul_vec(y);
    Ok((primal, stationarity.amax()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn inf() -> f64 {
        f64::INFINITY
    }

    #[test]
    fn unconstrained_stationary_point() {
        let prob = QpProblem::from_dense(
            &DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, -1.0]),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6 && (sol.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn active_upper_bound() {
        // (x - 2)² = x² - 4x + 4  ->  Q = 2, q = -4
        let prob = QpProblem::from_dense(
            &DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -4.0),
            &DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -inf()),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let sol = solve(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!(sol.y[0] > 0.0, "upper bound multiplier is positive");
    }

    #[test]
    fn residuals_examples() {
        let prob = QpProblem::from_dense(
            &DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, -2.0]),
            &DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let (p, d) = kkt_residuals(&prob, &DVector::from_vec(vec![1.0, 0.5]), &DVector::zeros(1)).unwrap();
        assert!(p >= 0.5);
        assert!(d > 0.0);

        let free = QpProblem::from_dense(
            &DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, -2.0]),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        let (p, d) = kkt_residuals(&free, &DVector::from_vec(vec![1.0, 2.0]), &DVector::zeros(0)).unwrap();
        assert_eq!((p, d), (0.0, 0.0));
        assert!(matches!(
            kkt_residuals(&free, &DVector::zeros(3), &DVector::zeros(0)),
            Err(QpError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn construction_validates() {
        let bad_bounds = QpProblem::from_dense(
            &DMatrix::identity(1, 1),
            DVector::zeros(1),
            &DMatrix::identity(1, 1),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 1.0),
        );
        assert!(matches!(bad_bounds, Err(QpError::InvalidBounds { row: 0, .. })));
        let bad_dims = QpProblem::from_dense(
            &DMatrix::identity(2, 2),
            DVector::zeros(3),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(matches!(bad_dims, Err(QpError::DimensionMismatch(_))));
    }

    #[test]
    fn cost_is_symmetrized() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let prob = QpProblem::from_dense(
            &q,
            DVector::zeros(2),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        let dense = prob.cost().to_dense();
        assert_eq!(dense, dense.transpose());
        assert_eq!(dense[(0, 1)], 0.5);
    }

    #[test]
    fn non_psd_cost_is_rejected() {
        let prob = QpProblem::from_dense(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DVector::zeros(2),
            &DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        assert!(matches!(
            solve(&prob, &QpSettings::default()),
            Err(QpError::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn infeasible_problem_is_detected() {
        // x >= 1 and x <= 0 written as two rows
        let prob = QpProblem::from_dense(
            &DMatrix::identity(1, 1),
            DVector::zeros(1),
            &DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0, -inf()]),
            DVector::from_vec(vec![inf(), 0.0]),
        )
        .unwrap();
        let sol = solve(&prob, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn warm_start_does_not_increase_iterations() {
        let n = 6;
        let b = DMatrix::from_fn(n, n, |i, j| (((i + 2) * (j + 5)) % 7) as f64 - 3.0);
        let q_mat = &b * b.transpose() + DMatrix::identity(n, n) * 0.1;
        let a = DMatrix::from_fn(4, n, |i, j| (((i + 1) * (j + 3)) % 5) as f64 - 2.0);
        let prob = QpProblem::from_dense(
            &q_mat,
            DVector::from_fn(n, |i, _| i as f64 - 2.5),
            &a,
            DVector::from_element(4, -1.0),
            DVector::from_element(4, 1.0),
        )
        .unwrap();
        let cold = solve(&prob, &QpSettings::default()).unwrap();
        let warm = solve(
            &prob,
            &QpSettings {
                warm_start: Some(WarmStart { x: cold.x.clone(), y: cold.y.clone() }),
                ..QpSettings::default()
            },
        )
        .unwrap();
        assert_eq!(warm.status, QpStatus::Solved);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn identical_inputs_are_bit_identical() {
        let prob = QpProblem::from_dense(
            &DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            DVector::from_vec(vec![0.5, -inf()]),
            DVector::from_vec(vec![0.5, 0.2]),
        )
        .unwrap();
        let a = solve(&prob, &QpSettings::default()).unwrap();
        let b = solve(&prob, &QpSettings::default()).unwrap();
        assert_eq!(a, b);
    }
}
