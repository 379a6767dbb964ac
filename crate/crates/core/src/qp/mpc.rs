//! Multi-stage (non-condensed) LPV-MPC problem assembly.
//!
//! Decision vector, stage by stage: `[u(i), μ(i+1), vec Σ(i+1)]` for
//! `i = 0..N_p`, the covariance block present only in covariance mode, then
//! slack variables of softened state constraints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::csc::CscMatrix;
use super::QpProblem;
use crate::chance::tightening_offset;
use crate::error::{dim_check, Error, Result};
use crate::ftc::LpvStep;

/// Half-space `αᵀv ≤ b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub alpha: Vec<f64>,
    pub b: f64,
}

impl HalfSpace {
    pub fn new(alpha: Vec<f64>, b: f64) -> Self {
        HalfSpace { alpha, b }
    }

    /// Rescales to `‖α‖₂ = 1`.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.alpha.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite() && self.b.is_finite()) {
            return Err(Error::Config(format!("degenerate half-space {:?} ≤ {}", self.alpha, self.b)));
        }
        Ok(HalfSpace { alpha: self.alpha.iter().map(|v| v / n).collect(), b: self.b / n })
    }

    fn is_opposite(&self, other: &HalfSpace) -> bool {
        self.alpha.len() == other.alpha.len() && self.alpha.iter().zip(&other.alpha).all(|(a, b)| (a + b).abs() < 1e-12)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// Covariance fixed to the schedule.
    Precov,
    /// Covariance propagated as decision variables.
    Cov,
}

/// Everything needed to build one LPV-MPC QP.
pub struct MpcQpInput<'a> {
    pub steps: &'a [LpvStep],
    pub q: &'a DMatrix<f64>,
    pub r: &'a DMatrix<f64>,
    /// `r(0..=N_p)`
    pub reference: &'a [DVector<f64>],
    /// Input offset in `‖u − u_ref‖_R²`; zero when absent.
    pub input_reference: Option<&'a DVector<f64>>,
    pub x0: &'a DVector<f64>,
    /// Scheduled `Σ(0..=N_p)`, used for tightening and, in precov mode, the
    /// trace cost.
    pub schedule_sigma: &'a [DMatrix<f64>],
    pub state_polytope: &'a [HalfSpace],
    pub input_polytope: &'a [HalfSpace],
    pub p_x: f64,
    pub mode: CovarianceMode,
    /// Slack penalty; `Some` softens the tightened state constraints.
    pub soft_penalty: Option<f64>,
}

/// Index map of the decision vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MpcLayout {
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
    pub cov: bool,
    pub n_slack: usize,
}

impl MpcLayout {
    pub fn stage_size(&self) -> usize {
        self.n_u + self.n_x + if self.cov { self.n_x * self.n_x } else { 0 }
    }

    /// Offset of `u(i)`, `i < N_p`.
    pub fn u(&self, i: usize) -> usize {
        i * self.stage_size()
    }

    /// Offset of `μ(i)`, `1 ≤ i ≤ N_p`.
    pub fn mu(&self, i: usize) -> usize {
        (i - 1) * self.stage_size() + self.n_u
    }

    /// Offset of `vec Σ(i)`, `1 ≤ i ≤ N_p` (covariance mode).
    pub fn sigma(&self, i: usize) -> usize {
        (i - 1) * self.stage_size() + self.n_u + self.n_x
    }

    pub fn slack_start(&self) -> usize {
        self.horizon * self.stage_size()
    }

    pub fn num_vars(&self) -> usize {
        self.slack_start() + self.n_slack
    }

    pub fn inputs(&self, x: &[f64]) -> Vec<DVector<f64>> {
        (0..self.horizon).map(|i| DVector::from_column_slice(&x[self.u(i)..self.u(i) + self.n_u])).collect()
    }

    /// `μ(1..=N_p)`
    pub fn means(&self, x: &[f64]) -> Vec<DVector<f64>> {
        (1..=self.horizon).map(|i| DVector::from_column_slice(&x[self.mu(i)..self.mu(i) + self.n_x])).collect()
    }

    /// `Σ(1..=N_p)` in covariance mode.
    pub fn covariances(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        self.cov.then(|| {
            let nn = self.n_x * self.n_x;
            (1..=self.horizon).map(|i| DMatrix::from_column_slice(self.n_x, self.n_x, &x[self.sigma(i)..self.sigma(i) + nn])).collect()
        })
    }

    pub fn slacks<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.slack_start()..]
    }
}

#[derive(Clone, Debug)]
pub struct AssembledQp {
    pub problem: QpProblem,
    pub layout: MpcLayout,
    /// Terms dropped from the objective: QP objective + constant = expected cost.
    pub constant: f64,
    /// Tightening offsets `c_{x,j}(Σ(i))` for `i = 1..=N_p`.
    pub tightening: Vec<Vec<f64>>,
}

struct Rows {
    triplets: Vec<(usize, usize, f64)>,
    l: Vec<f64>,
    u: Vec<f64>,
}

impl Rows {
    fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, l: f64, u: f64) -> usize {
        let r = self.l.len();
        for (c, v) in entries {
            if v != 0.0 {
                self.triplets.push((r, c, v));
            }
        }
        self.l.push(l);
        self.u.push(u);
        r
    }
}

/// Pairs each half-space with its opposite (if any) so that two-sided bounds
/// become one row. Returns `(upper index, optional lower index)`.
fn pair_halfspaces(hs: &[HalfSpace]) -> Vec<(usize, Option<usize>)> {
    let mut used = vec![false; hs.len()];
    let mut out = Vec::new();
    for j in 0..hs.len() {
        if used[j] {
            continue;
        }
        used[j] = true;
        let partner = (j + 1..hs.len()).find(|&k| !used[k] && hs[j].is_opposite(&hs[k]));
        if let Some(k) = partner {
            used[k] = true;
        }
        out.push((j, partner));
    }
    out
}

fn block_entries(m: &DMatrix<f64>, row: usize, col0: usize, sign: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
    (0..m.ncols()).map(move |c| (col0 + c, sign * m[(row, c)]))
}

/// Builds the QP of one LPV-MPC iteration.
pub fn qp_assemble_mpc(inp: &MpcQpInput) -> Result<AssembledQp> {
    let np = inp.steps.len();
    if np == 0 {
        return Err(Error::Argument("horizon must be at least one step".into()));
    }
    let nx = inp.x0.len();
    let nu = inp.steps[0].b_theta.ncols();
    let nn = nx * nx;
    dim_check("reference length", np + 1, inp.reference.len())?;
    dim_check("scheduled covariance length", np + 1, inp.schedule_sigma.len())?;
    dim_check("state weight", nx, inp.q.nrows())?;
    dim_check("input weight", nu, inp.r.nrows())?;
    for h in inp.state_polytope {
        dim_check("state half-space", nx, h.alpha.len())?;
    }
    for h in inp.input_polytope {
        dim_check("input half-space", nu, h.alpha.len())?;
    }
    let cov = inp.mode == CovarianceMode::Cov;
    if cov && inp.steps.iter().any(|s| s.zeta.is_none() || s.c_theta.is_none()) {
        return Err(Error::Argument("covariance mode needs fully factorized LPV steps".into()));
    }
    let ur = inp.input_reference.cloned().unwrap_or_else(|| DVector::zeros(nu));
    dim_check("input reference", nu, ur.len())?;

    let state_pairs = pair_halfspaces(inp.state_polytope);
    let input_pairs = pair_halfspaces(inp.input_polytope);
    let soft = inp.soft_penalty;
    let n_slack = if soft.is_some() { np * inp.state_polytope.len() } else { 0 };
    let layout = MpcLayout { n_x: nx, n_u: nu, horizon: np, cov, n_slack };
    let nvar = layout.num_vars();

    // Cost.
    let mut p_t = Vec::new();
    let mut qv = vec![0.0; nvar];
    let mut constant = 0.0;
    let e0 = inp.x0 - &inp.reference[0];
    constant += (e0.transpose() * inp.q * &e0)[(0, 0)] + (inp.q.component_mul(&inp.schedule_sigma[0])).sum();
    for i in 0..np {
        let (ou, om) = (layout.u(i), layout.mu(i + 1));
        for a in 0..nu {
            for b in 0..nu {
                p_t.push((ou + a, ou + b, 2.0 * inp.r[(a, b)]));
            }
        }
        let ru = inp.r * &ur;
        for a in 0..nu {
            qv[ou + a] = -2.0 * ru[a];
        }
        constant += (ur.transpose() * &ru)[(0, 0)];
        let rf = &inp.reference[i + 1];
        let qr = inp.q * rf;
        for a in 0..nx {
            for b in 0..nx {
                p_t.push((om + a, om + b, 2.0 * inp.q[(a, b)]));
            }
            qv[om + a] = -2.0 * qr[a];
        }
        constant += (rf.transpose() * &qr)[(0, 0)];
        if cov {
            let os = layout.sigma(i + 1);
            for c in 0..nx {
                for r in 0..nx {
                    qv[os + c * nx + r] = inp.q[(r, c)];
                }
            }
        } else {
            constant += inp.q.component_mul(&inp.schedule_sigma[i + 1]).sum();
        }
    }
    if let Some(pen) = soft {
        for k in 0..n_slack {
            qv[layout.slack_start() + k] = pen;
        }
    }
    let p = CscMatrix::from_triplets(nvar, nvar, &p_t.into_iter().filter(|t| t.2 != 0.0).collect::<Vec<_>>());

    // Constraints, stage by stage.
    let mut rows = Rows { triplets: Vec::new(), l: Vec::new(), u: Vec::new() };
    let mut tightening = Vec::with_capacity(np);
    for (i, st) in inp.steps.iter().enumerate() {
        dim_check("LPV step state", nx, st.a_theta.nrows())?;
        let (ou, om) = (layout.u(i), layout.mu(i + 1));
        let xbar = &st.anchor_x;
        let ubar = &st.anchor_u;
        // Mean dynamics.
        let mut rhs = &st.affine_theta - &st.b_theta * ubar;
        if i == 0 {
            rhs += &st.a_theta * (inp.x0 - xbar);
        } else {
            rhs -= &st.a_theta * xbar;
        }
        if !cov {
            rhs += &st.c_theta_sigma;
        }
        for r in 0..nx {
            let mut e: Vec<(usize, f64)> = vec![(om + r, 1.0)];
            e.extend(block_entries(&st.b_theta, r, ou, -1.0));
            if i > 0 {
                e.extend(block_entries(&st.a_theta, r, layout.mu(i), -1.0));
                if cov {
                    e.extend(block_entries(st.c_theta.as_ref().unwrap(), r, layout.sigma(i), -1.0));
                }
            }
            rows.push(e, rhs[r], rhs[r]);
        }
        // Covariance dynamics and symmetry.
        if cov {
            let z = st.zeta.as_ref().unwrap();
            let os = layout.sigma(i + 1);
            let mut rhs = &z.affine - &z.b * ubar;
            if i == 0 {
                rhs += &z.a * (inp.x0 - xbar);
            } else {
                rhs -= &z.a * xbar;
            }
            for r in 0..nn {
                let mut e: Vec<(usize, f64)> = vec![(os + r, 1.0)];
                e.extend(block_entries(&z.b, r, ou, -1.0));
                if i > 0 {
                    e.extend(block_entries(&z.a, r, layout.mu(i), -1.0));
                    e.extend(block_entries(&z.c, r, layout.sigma(i), -1.0));
                }
                rows.push(e, rhs[r], rhs[r]);
            }
            for c in 0..nx {
                for r in 0..c {
                    rows.push([(os + c * nx + r, 1.0), (os + r * nx + c, -1.0)], 0.0, 0.0);
                }
            }
        }
        // Input polytope.
        for &(j, k) in &input_pairs {
            let h = &inp.input_polytope[j];
            let lo = k.map_or(f64::NEG_INFINITY, |k| -inp.input_polytope[k].b);
            if lo > h.b {
                return Err(Error::InfeasibleBounds { step: i, halfspace: j, lower: lo, upper: h.b });
            }
            rows.push(h.alpha.iter().enumerate().map(|(a, &v)| (ou + a, v)), lo, h.b);
        }
        // Tightened state polytope on μ(i+1).
        let sig = &inp.schedule_sigma[i + 1];
        let offs: Vec<f64> = inp
            .state_polytope
            .iter()
            .map(|h| tightening_offset(&DVector::from_column_slice(&h.alpha), sig, inp.p_x))
            .collect::<Result<_>>()?;
        if soft.is_some() {
            for (j, h) in inp.state_polytope.iter().enumerate() {
                let sl = layout.slack_start() + i * inp.state_polytope.len() + j;
                let mut e: Vec<(usize, f64)> = h.alpha.iter().enumerate().map(|(a, &v)| (om + a, v)).collect();
                e.push((sl, -1.0));
                rows.push(e, f64::NEG_INFINITY, h.b - offs[j]);
                rows.push([(sl, 1.0)], 0.0, f64::INFINITY);
            }
        } else {
            for &(j, k) in &state_pairs {
                let h = &inp.state_polytope[j];
                let hi = h.b - offs[j];
                let lo = k.map_or(f64::NEG_INFINITY, |k| -(inp.state_polytope[k].b - offs[k]));
                if lo > hi {
                    return Err(Error::InfeasibleBounds { step: i + 1, halfspace: j, lower: lo, upper: hi });
                }
                rows.push(h.alpha.iter().enumerate().map(|(a, &v)| (om + a, v)), lo, hi);
            }
        }
        tightening.push(offs);
    }
    let m = rows.l.len();
    let a = CscMatrix::from_triplets(m, nvar, &rows.triplets);
    Ok(AssembledQp { problem: QpProblem { p, q: qv, a, l: rows.l, u: rows.u }, layout, constant, tightening })
}
