//! Cascaded closed loop: outer controller at `T_s`, rate PID and mixer at
//! the inner rate, truth dynamics at the simulation step.

use std::io::{Read, Write};
use std::path::Path;

use gpmpc_core::controller::{Controller, StepDiagnostics};
use gpmpc_core::propagation::NominalModel;
use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SimError};
use crate::nominal::PITCH_MARGIN;
use crate::params::QuadParams;
use crate::pid::RatePid;
use crate::reference::Reference;
use crate::truth::{Mixer, TruthModel, TruthState, TRUTH_DIM};

/// Bumped whenever the trajectory CSV columns change.
pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Outer-loop policy mapping the measured outer state and the reference
/// window to `(T, p, q, r)`.
pub trait OuterController {
    /// Number of future reference states requested beyond the current one.
    fn horizon(&self) -> usize;
    fn control(&mut self, x: &DVector<f64>, r_traj: &[DVector<f64>]) -> Result<(DVector<f64>, Option<StepDiagnostics>)>;
}

impl<N: NominalModel> OuterController for Controller<N> {
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn control(&mut self, x: &DVector<f64>, r_traj: &[DVector<f64>]) -> Result<(DVector<f64>, Option<StepDiagnostics>)> {
        let (u, d) = self.mpc_step(x, r_traj)?;
        Ok((u, Some(d)))
    }
}

/// Applies a fixed input regardless of the state.
#[derive(Clone, Debug)]
pub struct ConstantInput(pub DVector<f64>);

impl OuterController for ConstantInput {
    fn horizon(&self) -> usize {
        0
    }

    fn control(&mut self, _x: &DVector<f64>, _r: &[DVector<f64>]) -> Result<(DVector<f64>, Option<StepDiagnostics>)> {
        Ok((self.0.clone(), None))
    }
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub duration: f64,
    pub t_s: f64,
    pub dt_sim: f64,
    pub aero: bool,
    /// Per-axis variance of the white acceleration disturbance, resampled
    /// each outer tick; zero disables it.
    pub disturbance_var: f64,
    pub seed: u64,
    /// Defaults to rest at the reference start, level attitude.
    pub initial: Option<TruthState>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { duration: 10.0, t_s: 0.02, dt_sim: 5e-4, aero: true, disturbance_var: 0.0, seed: 0, initial: None }
    }
}

#[derive(Clone, Debug)]
pub struct TickRecord {
    pub k: usize,
    pub t: f64,
    pub truth: [f64; TRUTH_DIM],
    pub outer: [f64; 9],
    pub input: [f64; 4],
    pub reference: [f64; 3],
    /// Outer state one tick later.
    pub next_outer: [f64; 9],
    pub saturated: bool,
    pub disturbance: [f64; 3],
    pub diagnostics: Option<StepDiagnostics>,
}

#[derive(Clone, Debug, Default)]
pub struct TrajectoryLog {
    pub t_s: f64,
    pub ticks: Vec<TickRecord>,
}

const COLUMNS: &[&str] = &[
    "schema_version",
    "k",
    "t",
    "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wp", "wq", "wr",
    "x_px", "x_py", "x_pz", "x_vx", "x_vy", "x_vz", "x_phi", "x_theta", "x_psi",
    "u_thrust", "u_p", "u_q", "u_r",
    "ref_x", "ref_y", "ref_z",
    "nx_px", "nx_py", "nx_pz", "nx_vx", "nx_vy", "nx_vz", "nx_phi", "nx_theta", "nx_psi",
    "saturated",
    "dist_x", "dist_y", "dist_z",
    "iterations", "qp_iterations", "factorization_time_s", "qp_time_s", "step_time_s", "gap", "converged", "soft",
    "max_slack", "cost",
];

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.ticks.iter().map(|r| Vector3::new(r.outer[0], r.outer[1], r.outer[2])).collect()
    }

    pub fn references(&self) -> Vec<Vector3<f64>> {
        self.ticks.iter().map(|r| Vector3::from(r.reference)).collect()
    }

    pub fn diagnostics(&self) -> impl Iterator<Item = &StepDiagnostics> {
        self.ticks.iter().filter_map(|r| r.diagnostics.as_ref())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(COLUMNS)?;
        for r in &self.ticks {
            let mut row: Vec<String> =
                vec![TRAJECTORY_SCHEMA_VERSION.to_string(), r.k.to_string(), fmt(r.t)];
            row.extend(r.truth.iter().map(|&v| fmt(v)));
            row.extend(r.outer.iter().map(|&v| fmt(v)));
            row.extend(r.input.iter().map(|&v| fmt(v)));
            row.extend(r.reference.iter().map(|&v| fmt(v)));
            row.extend(r.next_outer.iter().map(|&v| fmt(v)));
            row.push((r.saturated as u8).to_string());
            row.extend(r.disturbance.iter().map(|&v| fmt(v)));
            match &r.diagnostics {
                Some(d) => {
                    row.extend([d.iterations.to_string(), d.qp_iterations.to_string()]);
                    row.extend([d.factorization_time_s, d.qp_time_s, d.total_time_s, d.gap].map(fmt));
                    row.extend([(d.converged as u8).to_string(), (d.soft as u8).to_string()]);
                    row.extend([d.max_slack, d.cost].map(fmt));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 10)),
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a log written by [`TrajectoryLog::write_csv`].
    pub fn read_csv<R: Read>(r: R, t_s: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != COLUMNS {
            return Err(SimError::Argument("trajectory CSV header does not match the current schema".into()));
        }
        let mut ticks = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| SimError::Argument(format!("column {}: {e}", COLUMNS[i])))
            };
            let version = f(0)? as u32;
            if version != TRAJECTORY_SCHEMA_VERSION {
                return Err(SimError::Argument(format!("unsupported trajectory schema version {version}")));
            }
            let arr = |start: usize, out: &mut [f64]| -> Result<()> {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = f(start + j)?;
                }
                Ok(())
            };
            let mut truth = [0.0; TRUTH_DIM];
            let mut outer = [0.0; 9];
            let mut input = [0.0; 4];
            let mut reference = [0.0; 3];
            let mut next_outer = [0.0; 9];
            let mut disturbance = [0.0; 3];
            arr(3, &mut truth)?;
            arr(16, &mut outer)?;
            arr(25, &mut input)?;
            arr(29, &mut reference)?;
            arr(32, &mut next_outer)?;
            arr(42, &mut disturbance)?;
            let diagnostics = if rec[45].is_empty() {
                None
            } else {
                Some(StepDiagnostics {
                    step: f(1)? as usize,
                    iterations: f(45)? as usize,
                    qp_iterations: f(46)? as usize,
                    factorization_time_s: f(47)?,
                    qp_time_s: f(48)?,
                    total_time_s: f(49)?,
                    gap: f(50)?,
                    converged: f(51)? != 0.0,
                    soft: f(52)? != 0.0,
                    max_slack: f(53)?,
                    cost: f(54)?,
                    ..Default::default()
                })
            };
            ticks.push(TickRecord {
                k: f(1)? as usize,
                t: f(2)?,
                truth,
                outer,
                input,
                reference,
                next_outer,
                saturated: f(41)? != 0.0,
                disturbance,
                diagnostics,
            });
        }
        Ok(TrajectoryLog { t_s, ticks })
    }
}

fn fmt(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{v:?}")
}

fn ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    let n = (a / b).round();
    if !(n >= 1.0) || ((n * b - a).abs() > 1e-9 * a) {
        return Err(SimError::Argument(format!("{what}: {a} is not a whole multiple of {b}")));
    }
    Ok(n as usize)
}

/// Runs the cascaded loop. On divergence or controller failure returns
/// [`SimError::Crash`] carrying the partial log.
pub fn simulate_closed_loop<C: OuterController + ?Sized>(
    controller: &mut C,
    reference: &dyn Reference,
    params: &QuadParams,
    opts: &SimOptions,
) -> Result<TrajectoryLog> {
    let fast_per_tick = ratio(opts.t_s, opts.dt_sim, "outer period")?;
    let fast_per_pid = ratio(1.0 / params.pid.rate_hz, opts.dt_sim, "rate-controller period")?;
    let n_ticks = (opts.duration / opts.t_s).round() as usize;
    let truth_model = TruthModel::new(params.clone(), opts.aero);
    let mixer = Mixer::new(params);
    let mut pid = RatePid::new(&params.pid);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.disturbance_var.max(0.0).sqrt())
        .map_err(|e| SimError::Argument(format!("disturbance variance: {e}")))?;

    let mut state = opts.initial.unwrap_or_else(|| TruthState::at_rest(reference.position(0.0)));
    let mut log = TrajectoryLog { t_s: opts.t_s, ticks: Vec::with_capacity(n_ticks) };
    let horizon = controller.horizon();
    let mut torque = Vector3::zeros();

    let crash = |tick: usize, reason: String, log: TrajectoryLog| SimError::Crash { tick, reason, log: Box::new(log) };

    for k in 0..n_ticks {
        let t = k as f64 * opts.t_s;
        let truth = state.to_array();
        let outer = state.outer();
        if let Some(reason) = unhealthy(&state, &outer) {
            log::warn!("closed loop aborted at tick {k}: {reason}");
            return Err(crash(k, reason, log));
        }
        let x = DVector::from_column_slice(&outer);
        let r_traj: Vec<DVector<f64>> =
            (0..=horizon).map(|i| DVector::from_column_slice(&reference.state(t + i as f64 * opts.t_s))).collect();
        let (u, diagnostics) = match controller.control(&x, &r_traj) {
            Ok(v) => v,
            Err(e) => return Err(crash(k, format!("controller failed: {e}"), log)),
        };
        if u.len() != 4 || u.iter().any(|v| !v.is_finite()) {
            return Err(crash(k, format!("controller returned an invalid input {:?}", u.as_slice()), log));
        }
        let disturbance = if opts.disturbance_var > 0.0 {
            Vector3::from_fn(|_, _| noise.sample(&mut rng))
        } else {
            Vector3::zeros()
        };
        let rate_ref = Vector3::new(u[1], u[2], u[3]);
        let mut saturated = false;
        for j in 0..fast_per_tick {
            if j % fast_per_pid == 0 {
                torque = pid.update(&rate_ref, &state.body_rates);
            }
            let alloc = mixer.allocate(u[0], &torque);
            saturated |= alloc.saturated;
            state = truth_model.step(&state, &alloc.thrusts, &disturbance, opts.dt_sim)?;
        }
        log.ticks.push(TickRecord {
            k,
            t,
            truth,
            outer,
            input: [u[0], u[1], u[2], u[3]],
            reference: reference.position(t).into(),
            next_outer: state.outer(),
            saturated,
            disturbance: disturbance.into(),
            diagnostics,
        });
    }
    Ok(log)
}

fn unhealthy(state: &TruthState, outer: &[f64; 9]) -> Option<String> {
    if !state.is_finite() || outer.iter().any(|v| !v.is_finite()) {
        return Some("non-finite state".into());
    }
    if outer[7].abs() >= std::f64::consts::FRAC_PI_2 - PITCH_MARGIN {
        return Some(format!("pitch {} at the Euler singularity", outer[7]));
    }
    // Past 90° of tilt the Euler extraction flips branch before reaching the singularity.
    let up = state.rotation()[(2, 2)];
    if up <= 0.0 {
        return Some(format!("vehicle inverted (body z-axis vertical component {up:.3})"));
    }
    None
}
