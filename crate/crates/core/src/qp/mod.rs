//! Sparse convex QP solver (operator splitting) and MPC problem assembly.
//!
//! Problems have the form `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`; equality
//! rows have `l = u` and absent bounds are infinite.

mod admm;
pub mod csc;
mod dump;
pub mod ldl;
pub mod mpc;

use serde::{Deserialize, Serialize};

pub use admm::QpSolver;
pub use csc::CscMatrix;
pub use dump::{dump_string, parse_dump, read_dump, write_dump};

use crate::error::{Error, Result};
use ldl::{LdlFactor, LdlSymbolic};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    /// Full symmetric cost matrix.
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.l.len()
    }

    /// Checks dimensions, bound ordering, symmetry and positive
    /// semidefiniteness of `P` (each up to 1e-9).
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.q.len(), self.l.len());
        if self.p.nrows != n || self.p.ncols != n {
            return Err(Error::Dimension(format!("P is {}×{}, expected {n}×{n}", self.p.nrows, self.p.ncols)));
        }
        if self.a.nrows != m || self.a.ncols != n || self.u.len() != m {
            return Err(Error::Dimension(format!("A is {}×{}, bounds {}/{}, expected {m}×{n}", self.a.nrows, self.a.ncols, m, self.u.len())));
        }
        if self.q.iter().chain(&self.p.values).chain(&self.a.values).any(|v| !v.is_finite()) {
            return Err(Error::Argument("QP data must be finite".into()));
        }
        for i in 0..m {
            if self.l[i].is_nan() || self.u[i].is_nan() || self.l[i] > self.u[i] || self.l[i] == f64::INFINITY || self.u[i] == f64::NEG_INFINITY {
                return Err(Error::Argument(format!("invalid bounds at row {i}: [{}, {}]", self.l[i], self.u[i])));
            }
        }
        for (r, c, v) in self.p.iter() {
            if (v - self.p.get(c, r)).abs() > 1e-9 {
                return Err(Error::Argument(format!("P is not symmetric at ({r}, {c})")));
            }
        }
        // PSD test: P + εI must admit an LDLᵀ factorization with positive pivots.
        let scale = self.p.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let eps = 1e-9 * scale;
        let mut t: Vec<_> = self.p.iter().filter(|&(r, c, _)| r <= c).collect();
        t.extend((0..n).map(|i| (i, i, eps)));
        let upper = CscMatrix::from_triplets(n, n, &t);
        let sym = LdlSymbolic::new(&upper)?;
        match LdlFactor::new(&sym, &upper) {
            Ok(f) if f.positive_pivots() == n => Ok(()),
            _ => Err(Error::Argument("P is not positive semidefinite".into())),
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of `l ≤ Ax ≤ u`: positive on active upper bounds,
    /// negative on active lower bounds.
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    /// Step-size parameter at exit, reused on warm start.
    pub rho: f64,
    pub polished: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub adaptive_rho_tolerance: f64,
    pub scaling_iters: usize,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iters: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-6,
            eps_dual_inf: 1e-6,
            max_iter: 10_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            adaptive_rho_tolerance: 5.0,
            scaling_iters: 10,
            polish: true,
            polish_delta: 1e-7,
            polish_refine_iters: 5,
        }
    }
}

/// One-shot solve; see [`QpSolver`] for reuse of the factorization pattern.
pub fn qp_solve(p: &QpProblem, warm_start: Option<&QpSolution>, opts: &QpSettings) -> Result<QpSolution> {
    QpSolver::new(opts.clone()).solve(p, warm_start)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
