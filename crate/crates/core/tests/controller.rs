use std::sync::Arc;

use gpmpc_core::controller::*;
use gpmpc_core::ftc::{factorize_horizon, AnchorPoint, FactorizeLevel};
use gpmpc_core::gp::{Dataset, Hyperparams};
use gpmpc_core::propagation::*;
use gpmpc_core::qp::mpc::*;
use gpmpc_core::scalar::Real;
use gpmpc_core::sparse_gp::SparseGpModel;
use gpmpc_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn linear_model(a: &[f64], b: &[f64], nx: usize, nu: usize) -> AugmentedModel<LinearModel> {
    AugmentedModel::nominal_only(LinearModel { a: DMatrix::from_row_slice(nx, nx, a), b: DMatrix::from_row_slice(nx, nu, b) })
}

fn cfg(q: Vec<f64>, r: Vec<f64>, horizon: usize) -> ControllerConfig {
    ControllerConfig { horizon, ..ControllerConfig::with_weights(Weight::Diagonal(q), Weight::Diagonal(r)) }
}

/// Unconstrained batch LQ: minimizes Σ_{i≥1} ‖x_i − r_i‖²_Q + Σ ‖u_i‖²_R.
fn batch_lq(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, x0: &DVector<f64>, refs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let (nx, nu) = (a.nrows(), b.ncols());
    let n = refs.len() - 1;
    let mut gamma = DMatrix::zeros(n * nx, n * nu);
    let mut phi_x0 = DVector::zeros(n * nx);
    let mut apow = DMatrix::identity(nx, nx);
    for i in 0..n {
        apow = a * &apow;
        phi_x0.rows_mut(i * nx, nx).copy_from(&(&apow * x0));
        for j in 0..=i {
            let mut m = b.clone();
            for _ in j..i {
                m = a * m;
            }
            gamma.view_mut((i * nx, j * nu), (nx, nu)).copy_from(&m);
        }
    }
    let mut qb = DMatrix::zeros(n * nx, n * nx);
    let mut rb = DMatrix::zeros(n * nu, n * nu);
    let mut rv = DVector::zeros(n * nx);
    for i in 0..n {
        qb.view_mut((i * nx, i * nx), (nx, nx)).copy_from(q);
        rb.view_mut((i * nu, i * nu), (nu, nu)).copy_from(r);
        rv.rows_mut(i * nx, nx).copy_from(&refs[i + 1]);
    }
    let h = gamma.transpose() * &qb * &gamma + rb;
    let g = gamma.transpose() * &qb * (rv - phi_x0);
    let u = h.lu().solve(&g).unwrap();
    (0..n).map(|i| u.rows(i * nu, nu).into_owned()).collect()
}

#[test]
fn shift_examples() {
    let s = shift_inputs(&[v(&[1.0]), v(&[2.0]), v(&[3.0])]);
    assert_eq!(s, vec![v(&[2.0]), v(&[3.0]), v(&[3.0])]);
    assert_eq!(shift_inputs(&[v(&[4.0])]), vec![v(&[4.0])]);
    let c = vec![v(&[1.0, 2.0]); 4];
    assert_eq!(shift_inputs(&c), c);
}

#[test]
fn schedule_of_identity_dynamics_is_constant() {
    let m = linear_model(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 1);
    let x = v(&[0.3, -0.7]);
    let s = init_schedule(&x, &vec![v(&[0.0]); 5], &m).unwrap();
    for p in &s.points {
        assert_eq!(p.mu(), x);
        assert!(p.sigma().amax() == 0.0);
    }
}

struct Toy;

impl NominalModel for Toy {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn eval<S: Real>(&self, x: &[S], u: &[S]) -> Vec<S> {
        vec![x[0] + x[1].scale(0.1), x[1] + (u[0] - x[0].sin().scale(0.5)).scale(0.1)]
    }
}

fn toy_gp(seed: u64) -> Arc<SparseGpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
    let y = DMatrix::from_fn(n, 1, |i, _| 0.3 * (x[(i, 1)]).sin() - 0.2 * x[(i, 0)] + 0.02 * rng.random_range(-1.0..1.0));
    let d = Dataset::new(x, y).unwrap();
    let h = Hyperparams::new(0.2, 0.01, vec![2.0, 2.0, 4.0]).unwrap();
    let u = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
    Arc::new(SparseGpModel::build(&d, &[h], &[u]).unwrap())
}

fn toy_model() -> AugmentedModel<Toy> {
    AugmentedModel::with_gp(Toy, toy_gp(3), vec![0, 1, 2], vec![1], 0.1, PropagationMode::Mm).unwrap()
}

#[test]
fn schedule_matches_repeated_propagation() {
    let m = toy_model();
    let x = v(&[0.2, 0.1]);
    let inputs: Vec<_> = (0..4).map(|k| v(&[0.1 * k as f64])).collect();
    let s = init_schedule(&x, &inputs, &m).unwrap();
    assert!(s.points[0].sigma().amax() == 0.0);
    let mut b = GaussianBelief::deterministic(x);
    for (i, u) in inputs.iter().enumerate() {
        assert_eq!(s.points[i].mu(), b.mean);
        assert_eq!(s.points[i].sigma(), b.covariance);
        b = m.step(&b, u.as_slice()).unwrap().belief;
    }
    assert_eq!(s.terminal_mean, b.mean);
}

#[test]
fn one_step_lq_by_hand() {
    let (a, b, q, r) = (0.9, 0.5, 2.0, 0.3);
    let m = linear_model(&[a], &[b], 1, 1);
    let mut c = Controller::new(m, cfg(vec![q], vec![r], 1)).unwrap();
    let (x0, r1) = (1.0, 0.2);
    let (u, _) = c.mpc_step(&v(&[x0]), &[v(&[0.0]), v(&[r1])]).unwrap();
    let expect = q * b * (r1 - a * x0) / (q * b * b + r);
    assert!((u[0] - expect).abs() < 1e-7, "{} vs {expect}", u[0]);
}

#[test]
fn linear_plant_converges_immediately_to_batch_lq() {
    let a = [1.0, 0.1, -0.2, 0.95];
    let b = [0.0, 0.1];
    let m = linear_model(&a, &b, 2, 1);
    let mut c = Controller::new(m, cfg(vec![10.0, 1.0], vec![0.1], 8)).unwrap();
    let x0 = v(&[1.0, -0.5]);
    let refs: Vec<_> = (0..=8).map(|i| v(&[0.1 * i as f64, 0.0])).collect();
    let (u, d) = c.mpc_step(&x0, &refs).unwrap();
    let lq = batch_lq(&DMatrix::from_row_slice(2, 2, &a), &DMatrix::from_row_slice(2, 1, &b), &DMatrix::from_diagonal(&v(&[10.0, 1.0])), &DMatrix::from_element(1, 1, 0.1), &x0, &refs);
    assert!((u[0] - lq[0][0]).abs() < 1e-6);
    for (p, l) in c.state.prev_inputs.iter().zip(&lq) {
        assert!((p[0] - l[0]).abs() < 1e-6);
    }
    assert!(d.converged);
    // The first QP is already the fixed point; the second pass only confirms it.
    assert!(d.iterations <= 2);
    assert!(d.gaps.last().unwrap() < &1e-6);
}

#[test]
fn covariance_modes_agree_for_linear_plant() {
    let a = [1.0, 0.1, -0.2, 0.95];
    let b = [0.0, 0.1];
    let refs: Vec<_> = (0..=5).map(|i| v(&[0.2 * i as f64, 0.1])).collect();
    let x0 = v(&[0.5, 0.0]);
    let mut us = Vec::new();
    for mode in [CovarianceMode::Precov, CovarianceMode::Cov] {
        let mut k = cfg(vec![5.0, 1.0], vec![0.1], 5);
        k.covariance_mode = mode;
        k.input_polytope = vec![HalfSpace::new(vec![1.0], 2.0), HalfSpace::new(vec![-1.0], 2.0)];
        let mut c = Controller::new(linear_model(&a, &b, 2, 1), k).unwrap();
        us.push(c.mpc_step(&x0, &refs).unwrap().0[0]);
    }
    assert!((us[0] - us[1]).abs() < 1e-6, "{us:?}");
}

#[test]
fn stage_cost_trivial_cases() {
    let k = cfg(vec![1.0, 2.0], vec![0.5], 2);
    let r = vec![v(&[1.0, 2.0]); 3];
    let zero = vec![DMatrix::zeros(2, 2); 3];
    let u = vec![v(&[0.0]); 2];
    assert_eq!(stage_cost(&r, &zero, &u, &r, &k).unwrap(), 0.0);
    let eye = vec![DMatrix::identity(2, 2); 3];
    assert_eq!(stage_cost(&r, &eye, &u, &r, &k).unwrap(), 3.0 * 3.0);
}

#[test]
fn qp_objective_plus_constant_is_expected_cost() {
    let m = toy_model();
    let mut k = cfg(vec![4.0, 1.0], vec![0.2], 6);
    k.max_iters = 1;
    let mut c = Controller::new(m, k.clone()).unwrap();
    let x0 = v(&[0.4, -0.2]);
    let refs: Vec<_> = (0..=6).map(|i| v(&[0.05 * i as f64, 0.0])).collect();
    c.mpc_step(&x0, &refs).unwrap();
    // Second step with a rollout schedule.
    let (_, d) = c.mpc_step(&x0, &refs).unwrap();
    let sched = c.state.schedule.clone().unwrap();
    let sigma = sched.covariances();
    let means = &c.state.predicted_means;
    let cost = stage_cost(means, &sigma, &c.state.prev_inputs, &refs, &k).unwrap();
    // The stored schedule is the rollout after the QP; the QP saw the one
    // before, so compare against a direct re-assembly instead.
    let _ = cost;
    let steps = factorize_horizon(&c.model, &AnchorPoint::new(x0.clone(), c.state.u_prev.clone().unwrap()), &sched.points, 9, FactorizeLevel::Mean).unwrap();
    let q = k.q.matrix().unwrap();
    let r = k.r.matrix().unwrap();
    let asm = qp_assemble_mpc(&MpcQpInput {
        steps: &steps,
        q: &q,
        r: &r,
        reference: &refs,
        input_reference: None,
        x0: &x0,
        schedule_sigma: &sigma,
        state_polytope: &[],
        input_polytope: &[],
        p_x: 0.95,
        mode: CovarianceMode::Precov,
        soft_penalty: None,
    })
    .unwrap();
    let sol = gpmpc_core::qp::qp_solve(&asm.problem, None, &Default::default()).unwrap();
    let mut mu = vec![x0.clone()];
    mu.extend(asm.layout.means(&sol.x));
    let expected = stage_cost(&mu, &sigma, &asm.layout.inputs(&sol.x), &refs, &k).unwrap();
    assert!((sol.objective + asm.constant - expected).abs() < 1e-9 * expected.max(1.0));
    assert!(d.cost.is_finite());
}

#[test]
fn fixed_point_satisfies_nonlinear_recursion() {
    let m = toy_model();
    let mut k = cfg(vec![10.0, 1.0], vec![0.1], 10);
    k.eps_lpv = 1e-8;
    k.max_iters = 40;
    k.qp.eps_abs = 1e-10;
    k.qp.eps_rel = 1e-10;
    k.state_polytope = vec![HalfSpace::new(vec![0.0, 1.0], 0.25)];
    let mut c = Controller::new(m, k).unwrap();
    let x0 = v(&[-0.5, 0.2]);
    let refs: Vec<_> = (0..=10).map(|i| v(&[0.5 * (0.3 * i as f64).sin(), 0.0])).collect();
    let (_, d) = c.mpc_step(&x0, &refs).unwrap();
    assert!(d.converged, "gaps {:?}", d.gaps);
    assert!(d.gap <= 1e-8);
    let ro = rollout(&c.model, x0.as_slice(), &c.state.prev_inputs).unwrap();
    for (mu, b) in c.state.predicted_means.iter().zip(&ro.beliefs) {
        assert!((mu - &b.mean).amax() < 1e-7, "{mu} vs {}", b.mean);
    }
}

#[test]
fn chance_constraints_hold_on_predicted_means() {
    let m = toy_model();
    let mut k = cfg(vec![10.0, 1.0], vec![0.1], 8);
    k.state_polytope = vec![HalfSpace::new(vec![2.0, 0.0], 0.6)];
    let mut c = Controller::new(m, k).unwrap();
    let x0 = v(&[0.0, 0.0]);
    let refs = vec![v(&[1.0, 0.0]); 9];
    let (_, d) = c.mpc_step(&x0, &refs).unwrap();
    assert!(!d.soft);
    let sched = c.state.schedule.clone().unwrap();
    let cov = sched.covariances();
    for (i, mu) in c.state.predicted_means.iter().enumerate().skip(1) {
        let bound = tighten_halfspace(&v(&[1.0, 0.0]), 0.3, &cov[i], 0.95).unwrap();
        assert!(mu[0] <= bound + 1e-3, "step {i}: {} > {bound}", mu[0]);
    }
}

#[test]
fn empty_tightened_set_falls_back_to_soft_constraints() {
    let m = toy_model();
    let mut k = cfg(vec![1.0, 1.0], vec![0.1], 4);
    k.state_polytope = vec![HalfSpace::new(vec![1.0, 0.0], -1.0), HalfSpace::new(vec![-1.0, 0.0], -1.0)];
    let mut c = Controller::new(m, k).unwrap();
    let (_, d) = c.mpc_step(&v(&[0.0, 0.0]), &vec![v(&[0.0, 0.0]); 5]).unwrap();
    assert!(d.soft);
    assert!(d.max_slack > 0.0);
}

#[test]
fn rti_runs_one_iteration_and_is_deterministic() {
    let mut k = cfg(vec![10.0, 1.0], vec![0.1], 6);
    k.rti = true;
    let refs: Vec<_> = (0..=6).map(|i| v(&[0.1 * i as f64, 0.0])).collect();
    let mut outs = Vec::new();
    for _ in 0..2 {
        let mut c = Controller::new(toy_model(), k.clone()).unwrap();
        let (u, d) = c.mpc_step(&v(&[0.1, 0.0]), &refs).unwrap();
        assert_eq!(d.iterations, 1);
        assert!(d.gaps.is_empty());
        let (u2, _) = c.mpc_step(&v(&[0.12, 0.01]), &refs).unwrap();
        outs.push((u, u2));
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn assembly_dimensions_and_purity() {
    let m = toy_model();
    let x0 = v(&[0.1, 0.2]);
    let np = 3;
    let sched = init_schedule(&x0, &vec![v(&[0.3]); np], &m).unwrap();
    let anchor = AnchorPoint::new(x0.clone(), v(&[0.0]));
    let sigma = sched.covariances();
    let q = DMatrix::identity(2, 2);
    let r = DMatrix::identity(1, 1);
    let refs = vec![v(&[0.0, 0.0]); np + 1];
    let hs = [HalfSpace::new(vec![1.0, 0.0], 1.0)];
    for (mode, level, size) in [(CovarianceMode::Precov, FactorizeLevel::Mean, np * 3), (CovarianceMode::Cov, FactorizeLevel::Full, np * 3 + np * 4)] {
        let steps = factorize_horizon(&m, &anchor, &sched.points, 9, level).unwrap();
        let input = MpcQpInput {
            steps: &steps,
            q: &q,
            r: &r,
            reference: &refs,
            input_reference: None,
            x0: &x0,
            schedule_sigma: &sigma,
            state_polytope: &hs,
            input_polytope: &[],
            p_x: 0.9,
            mode,
            soft_penalty: None,
        };
        let a1 = qp_assemble_mpc(&input).unwrap();
        let a2 = qp_assemble_mpc(&input).unwrap();
        assert_eq!(a1.problem, a2.problem);
        assert_eq!(a1.problem.num_vars(), size);
        // GP uncertainty enters the second state and reaches the first one
        // a step later.
        assert_eq!(a1.tightening[0][0], 0.0);
        assert!(a1.tightening[2][0] > 0.0);
    }
}

#[test]
fn zero_covariance_leaves_polytope_untightened() {
    let m = linear_model(&[1.0], &[1.0], 1, 1);
    let x0 = v(&[0.0]);
    let sched = init_schedule(&x0, &[v(&[0.0])], &m).unwrap();
    let steps = factorize_horizon(&m, &AnchorPoint::new(x0.clone(), v(&[0.0])), &sched.points, 3, FactorizeLevel::Mean).unwrap();
    let hs = [HalfSpace::new(vec![1.0], 0.5), HalfSpace::new(vec![-1.0], 0.25)];
    let asm = qp_assemble_mpc(&MpcQpInput {
        steps: &steps,
        q: &DMatrix::identity(1, 1),
        r: &DMatrix::identity(1, 1),
        reference: &[v(&[0.0]), v(&[0.0])],
        input_reference: None,
        x0: &x0,
        schedule_sigma: &sched.covariances(),
        state_polytope: &hs,
        input_polytope: &[],
        p_x: 0.99,
        mode: CovarianceMode::Precov,
        soft_penalty: None,
    })
    .unwrap();
    assert_eq!(asm.tightening[0], vec![0.0, 0.0]);
    let last = asm.problem.num_constraints() - 1;
    assert_eq!((asm.problem.l[last], asm.problem.u[last]), (-0.25, 0.5));
}

#[test]
fn infeasible_bounds_name_step_and_halfspace() {
    let m = linear_model(&[1.0], &[1.0], 1, 1);
    let x0 = v(&[0.0]);
    let sched = init_schedule(&x0, &[v(&[0.0]), v(&[0.0])], &m).unwrap();
    let steps = factorize_horizon(&m, &AnchorPoint::new(x0.clone(), v(&[0.0])), &sched.points, 3, FactorizeLevel::Mean).unwrap();
    let hs = [HalfSpace::new(vec![1.0], -0.5), HalfSpace::new(vec![-1.0], -0.5)];
    let err = qp_assemble_mpc(&MpcQpInput {
        steps: &steps,
        q: &DMatrix::identity(1, 1),
        r: &DMatrix::identity(1, 1),
        reference: &[v(&[0.0]), v(&[0.0]), v(&[0.0])],
        input_reference: None,
        x0: &x0,
        schedule_sigma: &sched.covariances(),
        state_polytope: &hs,
        input_polytope: &[],
        p_x: 0.9,
        mode: CovarianceMode::Precov,
        soft_penalty: None,
    })
    .unwrap_err();
    assert!(matches!(err, Error::InfeasibleBounds { step: 1, halfspace: 0, .. }), "{err}");
}

#[test]
fn config_parses_and_normalizes() {
    let text = r#"
horizon = 4
q = [1.0, 2.0]
r = [[0.5]]
p_x = 0.9
propagation_mode = "taylor"
covariance_mode = "cov"
eps_lpv = 0.001
max_iters = 5
t_s = 0.05
state_polytope = [{ alpha = [3.0, 4.0], b = 10.0 }]

[qp]
eps_abs = 1e-7
"#;
    let c = ControllerConfig::from_toml_str(text).unwrap();
    assert_eq!(c.state_polytope[0].alpha, vec![0.6, 0.8]);
    assert_eq!(c.state_polytope[0].b, 2.0);
    assert_eq!(c.qp.eps_abs, 1e-7);
    assert_eq!(c.qp.rho, 0.1);
    assert_eq!(c.quad_nodes, 9);
    assert!(ControllerConfig::from_toml_str(&text.replace("eps_lpv = 0.001", "eps_lpv = 0.0")).is_err());
    assert!(ControllerConfig::from_toml_str(&text.replace("horizon = 4", "horizon = 0")).is_err());
    assert!(ControllerConfig::from_toml_str(&text.replace("p_x = 0.9", "p_x = 1.0")).is_err());
    assert!(ControllerConfig::from_toml_str(&format!("bogus = 1\n{text}")).is_err());
    assert!(ControllerConfig::from_toml_str(&format!("{text}\nbogus = 1")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn shift_keeps_length_and_last(vals in proptest::collection::vec(-5.0f64..5.0, 1..10)) {
        let seq: Vec<_> = vals.iter().map(|&x| v(&[x])).collect();
        let s = shift_inputs(&seq);
        prop_assert_eq!(s.len(), seq.len());
        prop_assert_eq!(s.last(), seq.last());
        for i in 0..seq.len() - 1 {
            prop_assert_eq!(&s[i], &seq[i + 1]);
        }
    }
}
