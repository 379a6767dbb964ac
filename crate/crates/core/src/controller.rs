//! Iterated LPV GP-MPC.
//!
//! Each control step repeats: factorize the moment maps along the current
//! schedule, solve the LPV-MPC QP, re-simulate the nonlinear moment model with
//! the new inputs and update the schedule, until the normalized schedule change
//! falls below `eps_lpv` or the iteration limit is hit.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::ftc::{factorize_horizon, AnchorPoint, FactorizeLevel, SchedulingPoint};
use crate::propagation::{rollout, AugmentedModel, NominalModel, PropagationMode};
use crate::qp::mpc::{qp_assemble_mpc, AssembledQp, CovarianceMode, HalfSpace, MpcQpInput};
use crate::qp::{QpSettings, QpSolution, QpSolver, QpStatus};

pub use crate::chance::tighten_halfspace;

/// A weight matrix given either by its diagonal or in full (row lists).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Weight {
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            Weight::Diagonal(d) => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            Weight::Full(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config("weight matrix must be square".into()));
                }
                Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub q: Weight,
    pub r: Weight,
    pub p_x: f64,
    #[serde(default)]
    pub state_polytope: Vec<HalfSpace>,
    #[serde(default)]
    pub input_polytope: Vec<HalfSpace>,
    pub propagation_mode: PropagationMode,
    pub covariance_mode: CovarianceMode,
    pub eps_lpv: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub rti: bool,
    pub t_s: f64,
    /// Odd number of Simpson nodes along each factorization segment.
    #[serde(default = "default_nodes")]
    pub quad_nodes: usize,
    /// Penalty on slack of softened state constraints.
    #[serde(default = "default_penalty")]
    pub soft_penalty: f64,
    /// Typical magnitudes of state and input entries for the convergence gap;
    /// empty means unit scaling.
    #[serde(default)]
    pub gap_state_scale: Vec<f64>,
    #[serde(default)]
    pub gap_input_scale: Vec<f64>,
    /// Input offset in the input cost; zero when absent.
    #[serde(default)]
    pub input_reference: Option<Vec<f64>>,
    #[serde(default)]
    pub qp: QpSettings,
}

fn default_nodes() -> usize {
    9
}

fn default_penalty() -> f64 {
    1e4
}

impl ControllerConfig {
    /// Scalar defaults: `N_p = 12`, `p_x = 0.95`, `ε_lpv = 0.01`, 12
    /// iterations, `T_s = 0.02 s`, moment matching with precomputed covariance.
    pub fn with_weights(q: Weight, r: Weight) -> Self {
        ControllerConfig {
            horizon: 12,
            q,
            r,
            p_x: 0.95,
            state_polytope: Vec::new(),
            input_polytope: Vec::new(),
            propagation_mode: PropagationMode::Mm,
            covariance_mode: CovarianceMode::Precov,
            eps_lpv: 0.01,
            max_iters: 12,
            rti: false,
            t_s: 0.02,
            quad_nodes: default_nodes(),
            soft_penalty: default_penalty(),
            gap_state_scale: Vec::new(),
            gap_input_scale: Vec::new(),
            input_reference: None,
            qp: QpSettings::default(),
        }
    }

    /// Parses TOML and normalizes the polytopes.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut c: ControllerConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.normalize()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Validates scalars and rescales every half-space to `‖α‖₂ = 1`.
    pub fn normalize(&mut self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.eps_lpv > 0.0) {
            return Err(Error::Config("eps_lpv must be positive".into()));
        }
        if !(self.p_x > 0.0 && self.p_x < 1.0) {
            return Err(Error::Config("p_x must lie in (0, 1)".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.t_s > 0.0) {
            return Err(Error::Config("t_s must be positive".into()));
        }
        if self.quad_nodes < 3 || self.quad_nodes % 2 == 0 {
            return Err(Error::Config("quad_nodes must be odd and at least 3".into()));
        }
        let q = self.q.matrix()?;
        let r = self.r.matrix()?;
        if q.symmetric_eigenvalues().iter().any(|&v| v < -1e-12) || (&q - q.transpose()).amax() > 1e-12 {
            return Err(Error::Config("Q must be symmetric positive semidefinite".into()));
        }
        if r.symmetric_eigenvalues().iter().any(|&v| v <= 0.0) || (&r - r.transpose()).amax() > 1e-12 {
            return Err(Error::Config("R must be symmetric positive definite".into()));
        }
        self.state_polytope = self.state_polytope.iter().map(HalfSpace::normalized).collect::<Result<_>>()?;
        self.input_polytope = self.input_polytope.iter().map(HalfSpace::normalized).collect::<Result<_>>()?;
        Ok(())
    }

    fn check_dims(&self, nx: usize, nu: usize) -> Result<()> {
        dim_check("Q size", nx, self.q.matrix()?.nrows())?;
        dim_check("R size", nu, self.r.matrix()?.nrows())?;
        if !self.gap_state_scale.is_empty() {
            dim_check("gap state scale", nx, self.gap_state_scale.len())?;
        }
        if !self.gap_input_scale.is_empty() {
            dim_check("gap input scale", nu, self.gap_input_scale.len())?;
        }
        if let Some(u) = &self.input_reference {
            dim_check("input reference", nu, u.len())?;
        }
        Ok(())
    }
}

/// Scheduling trajectory `ρ(0..N_p)` plus the terminal belief `(μ(N_p), Σ(N_p))`.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub points: Vec<SchedulingPoint>,
    pub terminal_mean: DVector<f64>,
    pub terminal_cov: DMatrix<f64>,
}

impl Schedule {
    /// `Σ(0..=N_p)`
    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        let mut v: Vec<_> = self.points.iter().map(|p| p.sigma()).collect();
        v.push(self.terminal_cov.clone());
        v
    }

    /// `μ(0..=N_p)`
    pub fn means(&self) -> Vec<DVector<f64>> {
        let mut v: Vec<_> = self.points.iter().map(|p| p.mu()).collect();
        v.push(self.terminal_mean.clone());
        v
    }

    /// Normalized `∞`-norm distance between two schedules.
    pub fn gap(&self, other: &Schedule, state_scale: &[f64], input_scale: &[f64]) -> f64 {
        let mut g = 0.0f64;
        for (a, b) in self.points.iter().zip(&other.points) {
            let (nx, nu) = (a.state_dim(), a.input_dim());
            for k in 0..a.rho.len() {
                let s = if k < nx {
                    state_scale.get(k).copied().unwrap_or(1.0)
                } else if k < nx + nu {
                    input_scale.get(k - nx).copied().unwrap_or(1.0)
                } else {
                    1.0
                };
                g = g.max(((a.rho[k] - b.rho[k]) / s).abs());
            }
        }
        g
    }
}

/// `u(i) = prev(i+1)` for `i < N_p − 1`, last entry repeated.
pub fn shift_inputs(prev: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = prev.len();
    (0..n).map(|i| prev[(i + 1).min(n.saturating_sub(1))].clone()).collect()
}

/// Rolls the nonlinear moment model out from `x_k` with the given inputs.
pub fn init_schedule<N: NominalModel>(x_k: &DVector<f64>, inputs: &[DVector<f64>], model: &AugmentedModel<N>) -> Result<Schedule> {
    let ro = rollout(model, x_k.as_slice(), inputs)?;
    let points = ro.beliefs[..inputs.len()]
        .iter()
        .zip(inputs)
        .map(|(b, u)| SchedulingPoint::new(&b.mean, u, &b.covariance))
        .collect::<Result<_>>()?;
    let last = ro.beliefs.last().unwrap();
    Ok(Schedule { points, terminal_mean: last.mean.clone(), terminal_cov: last.covariance.clone() })
}

/// Constant schedule `(x, 0, 0)` used before any input sequence exists.
pub fn constant_schedule(x: &DVector<f64>, nu: usize, horizon: usize) -> Schedule {
    let n = x.len();
    let p = SchedulingPoint::new(x, &DVector::zeros(nu), &DMatrix::zeros(n, n)).expect("consistent dimensions");
    Schedule { points: vec![p; horizon], terminal_mean: x.clone(), terminal_cov: DMatrix::zeros(n, n) }
}

/// Expected cost `Σ_{i=0}^{N_p} ‖μ(i) − r(i)‖²_Q + Tr(QΣ(i)) + Σ_{i<N_p} ‖u(i) − u_ref‖²_R`.
pub fn stage_cost(
    mu: &[DVector<f64>],
    sigma: &[DMatrix<f64>],
    inputs: &[DVector<f64>],
    reference: &[DVector<f64>],
    cfg: &ControllerConfig,
) -> Result<f64> {
    dim_check("covariance trajectory", mu.len(), sigma.len())?;
    dim_check("reference trajectory", mu.len(), reference.len())?;
    dim_check("input trajectory", mu.len().saturating_sub(1), inputs.len())?;
    let q = cfg.q.matrix()?;
    let r = cfg.r.matrix()?;
    let mut c = 0.0;
    for i in 0..mu.len() {
        let e = &mu[i] - &reference[i];
        c += (e.transpose() * &q * &e)[(0, 0)] + q.component_mul(&sigma[i]).sum();
    }
    let ur = cfg.input_reference.as_ref().map(|v| DVector::from_column_slice(v));
    for u in inputs {
        let d = match &ur {
            Some(ur) => u - ur,
            None => u.clone(),
        };
        c += (d.transpose() * &r * &d)[(0, 0)];
    }
    Ok(c)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub iterations: usize,
    pub qp_iterations: usize,
    pub factorization_time_s: f64,
    pub qp_time_s: f64,
    pub total_time_s: f64,
    /// Final convergence gap (infinite when no re-simulation took place).
    pub gap: f64,
    pub converged: bool,
    pub soft: bool,
    pub max_slack: f64,
    /// QP objective plus dropped constants.
    pub cost: f64,
    #[serde(skip)]
    pub gaps: Vec<f64>,
    #[serde(skip)]
    pub qp_status: Option<QpStatus>,
}

#[derive(Clone, Debug, Default)]
pub struct ControllerState {
    /// Last input sequence, `N_p × n_u`.
    pub prev_inputs: Vec<DVector<f64>>,
    pub prev_solution: Option<QpSolution>,
    pub schedule: Option<Schedule>,
    /// Input applied at the previous step.
    pub u_prev: Option<DVector<f64>>,
    pub step: usize,
    pub iteration_log: Vec<StepDiagnostics>,
    /// Predicted means `μ(0..=N_p)` of the last returned plan.
    pub predicted_means: Vec<DVector<f64>>,
}

/// Moves a stage-ordered primal/dual pair one stage forward, repeating the
/// last stage; used to warm-start the next control step.
fn shift_solution(mut sol: QpSolution, horizon: usize) -> QpSolution {
    fn shift(v: &mut [f64], horizon: usize) {
        if horizon < 2 || v.len() % horizon != 0 {
            return;
        }
        let block = v.len() / horizon;
        v.copy_within(block.., 0);
    }
    shift(&mut sol.x, horizon);
    shift(&mut sol.y, horizon);
    sol
}

/// Result of one QP within the inner loop.
struct Solved {
    asm: AssembledQp,
    sol: QpSolution,
    soft: bool,
}

pub struct Controller<N> {
    pub model: AugmentedModel<N>,
    pub cfg: ControllerConfig,
    pub state: ControllerState,
    solver: QpSolver,
    soft_solver: QpSolver,
    log: Option<csv::Writer<File>>,
}

impl<N: NominalModel> Controller<N> {
    pub fn new(mut model: AugmentedModel<N>, mut cfg: ControllerConfig) -> Result<Self> {
        cfg.normalize()?;
        cfg.check_dims(model.state_dim(), model.input_dim())?;
        model.mode = cfg.propagation_mode;
        let solver = QpSolver::new(cfg.qp.clone());
        let soft_solver = QpSolver::new(cfg.qp.clone());
        Ok(Controller { model, cfg, state: ControllerState::default(), solver, soft_solver, log: None })
    }

    /// Appends per-step diagnostics to a CSV file.
    pub fn log_to(&mut self, path: &Path) -> Result<()> {
        let w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        self.log = Some(w);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state = ControllerState::default();
    }

    fn solve_qp(&mut self, steps: &[crate::ftc::LpvStep], x_k: &DVector<f64>, r_traj: &[DVector<f64>], schedule: &Schedule, warm: Option<&QpSolution>) -> Result<Solved> {
        let q = self.cfg.q.matrix()?;
        let r = self.cfg.r.matrix()?;
        let ur = self.cfg.input_reference.as_ref().map(|v| DVector::from_column_slice(v));
        let sig = schedule.covariances();
        let mut input = MpcQpInput {
            steps,
            q: &q,
            r: &r,
            reference: r_traj,
            input_reference: ur.as_ref(),
            x0: x_k,
            schedule_sigma: &sig,
            state_polytope: &self.cfg.state_polytope,
            input_polytope: &self.cfg.input_polytope,
            p_x: self.cfg.p_x,
            mode: self.cfg.covariance_mode,
            soft_penalty: None,
        };
        let hard = match qp_assemble_mpc(&input) {
            Ok(asm) => {
                let sol = self.solver.solve(&asm.problem, warm)?;
                if sol.status == QpStatus::PrimalInfeasible {
                    log::warn!("step {}: LPV-MPC QP infeasible, softening state constraints", self.state.step);
                    None
                } else {
                    Some(Solved { asm, sol, soft: false })
                }
            }
            Err(Error::InfeasibleBounds { step, halfspace, lower, upper }) => {
                log::warn!("step {}: tightened bounds empty at prediction {step}, half-space {halfspace} ({lower} > {upper}); softening", self.state.step);
                None
            }
            Err(e) => return Err(e),
        };
        if let Some(s) = hard {
            return Ok(s);
        }
        input.soft_penalty = Some(self.cfg.soft_penalty);
        let asm = qp_assemble_mpc(&input)?;
        let sol = self.soft_solver.solve(&asm.problem, None)?;
        let viol = asm.layout.slacks(&sol.x).iter().fold(0.0f64, |m, v| m.max(*v));
        log::warn!("step {}: soft solve status {:?}, max state-constraint violation {viol:.3e}", self.state.step, sol.status);
        Ok(Solved { asm, sol, soft: true })
    }

    /// One control step: returns `u(0|k)` and diagnostics. `r_traj` holds
    /// `r(0..=N_p)`.
    pub fn mpc_step(&mut self, x_k: &DVector<f64>, r_traj: &[DVector<f64>]) -> Result<(DVector<f64>, StepDiagnostics)> {
        let t_start = Instant::now();
        let (nx, nu, np) = (self.model.state_dim(), self.model.input_dim(), self.cfg.horizon);
        dim_check("state", nx, x_k.len())?;
        dim_check("reference length", np + 1, r_traj.len())?;
        let u_prev = self.state.u_prev.clone().unwrap_or_else(|| DVector::zeros(nu));
        let mut schedule = if self.state.prev_inputs.len() == np {
            init_schedule(x_k, &shift_inputs(&self.state.prev_inputs), &self.model)?
        } else {
            constant_schedule(x_k, nu, np)
        };
        let anchor = AnchorPoint::new(x_k.clone(), u_prev);
        let level = match self.cfg.covariance_mode {
            CovarianceMode::Precov => FactorizeLevel::Mean,
            CovarianceMode::Cov => FactorizeLevel::Full,
        };

        let mut warm = self.state.prev_solution.take().map(|w| shift_solution(w, np));
        let (mut t_fac, mut t_qp) = (0.0, 0.0);
        let mut qp_iters = 0;
        let mut gaps = Vec::new();
        let mut best: Option<(f64, Solved, Schedule)> = None;
        let mut last: Option<Solved> = None;
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..self.cfg.max_iters {
            iterations += 1;
            let t0 = Instant::now();
            let steps = factorize_horizon(&self.model, &anchor, &schedule.points, self.cfg.quad_nodes, level)?;
            t_fac += t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let solved = self.solve_qp(&steps, x_k, r_traj, &schedule, warm.as_ref())?;
            t_qp += t1.elapsed().as_secs_f64();
            qp_iters += solved.sol.iterations;
            if solved.sol.status == QpStatus::DualInfeasible {
                return Err(Error::Numerical("LPV-MPC QP is unbounded".into()));
            }
            if solved.sol.status == QpStatus::PrimalInfeasible {
                return Err(Error::Numerical("softened LPV-MPC QP is infeasible (input constraints)".into()));
            }
            if !solved.soft {
                warm = Some(solved.sol.clone());
            }
            let inputs = solved.asm.layout.inputs(&solved.sol.x);
            if self.cfg.rti {
                last = Some(solved);
                break;
            }
            let next = init_schedule(x_k, &inputs, &self.model)?;
            let gap = next.gap(&schedule, &self.cfg.gap_state_scale, &self.cfg.gap_input_scale);
            gaps.push(gap);
            schedule = next;
            if gap <= self.cfg.eps_lpv {
                converged = true;
                last = Some(solved);
                break;
            }
            if best.as_ref().is_none_or(|b| gap < b.0) {
                best = Some((gap, solved, schedule.clone()));
            } else {
                last = Some(solved);
            }
        }
        let chosen = if converged || self.cfg.rti {
            last.unwrap()
        } else {
            let (_, s, sch) = best.expect("at least one iteration");
            schedule = sch;
            log::debug!("step {}: LPV iteration limit reached, gaps {gaps:?}", self.state.step);
            s
        };

        let layout = &chosen.asm.layout;
        let inputs = layout.inputs(&chosen.sol.x);
        let u0 = inputs[0].clone();
        let mut means = vec![x_k.clone()];
        means.extend(layout.means(&chosen.sol.x));
        let diag = StepDiagnostics {
            step: self.state.step,
            iterations,
            qp_iterations: qp_iters,
            factorization_time_s: t_fac,
            qp_time_s: t_qp,
            total_time_s: t_start.elapsed().as_secs_f64(),
            gap: gaps.last().copied().unwrap_or(f64::INFINITY),
            converged,
            soft: chosen.soft,
            max_slack: layout.slacks(&chosen.sol.x).iter().fold(0.0f64, |m, v| m.max(*v)),
            cost: chosen.sol.objective + chosen.asm.constant,
            gaps,
            qp_status: Some(chosen.sol.status),
        };
        if let Some(w) = self.log.as_mut() {
            w.serialize(&diag).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            w.flush()?;
        }
        self.state.prev_inputs = inputs;
        self.state.prev_solution = if chosen.soft { warm } else { Some(chosen.sol) };
        self.state.schedule = Some(schedule);
        self.state.u_prev = Some(u0.clone());
        self.state.predicted_means = means;
        self.state.step += 1;
        self.state.iteration_log.push(diag.clone());
        Ok((u0, diag))
    }
}
