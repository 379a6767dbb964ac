use gpmpc_core::qp::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INF: f64 = f64::INFINITY;

fn problem(p: &DMatrix<f64>, q: &[f64], a: &DMatrix<f64>, l: &[f64], u: &[f64]) -> QpProblem {
    QpProblem { p: CscMatrix::from_dense(p), q: q.to_vec(), a: CscMatrix::from_dense(a), l: l.to_vec(), u: u.to_vec() }
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * 0.5
}

/// Brute-force optimum: every assignment of rows to {free, lower, upper}
/// gives an equality-constrained KKT system; the unique point satisfying
/// primal feasibility and multiplier signs is optimal.
fn enumerate_active_sets(p: &DMatrix<f64>, q: &[f64], a: &DMatrix<f64>, l: &[f64], u: &[f64]) -> Option<DVector<f64>> {
    let (n, m) = (q.len(), l.len());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let mut c = code;
        let mut rows = Vec::new();
        let mut ok = true;
        for i in 0..m {
            match c % 3 {
                1 if l[i].is_finite() => rows.push((i, l[i], -1.0)),
                2 if u[i].is_finite() && u[i] != l[i] => rows.push((i, u[i], 1.0)),
                0 => {}
                _ => ok = false,
            }
            c /= 3;
        }
        if !ok {
            continue;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        let mut rhs = DVector::zeros(n + k);
        for j in 0..n {
            rhs[j] = -q[j];
        }
        for (r, &(i, b, _)) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        let ax = a * &x;
        if (0..m).any(|i| ax[i] < l[i] - 1e-9 || ax[i] > u[i] + 1e-9) {
            continue;
        }
        let signs_ok = rows.iter().enumerate().all(|(r, &(i, _, s))| l[i] == u[i] || sol[n + r] * s >= -1e-9);
        if !signs_ok {
            continue;
        }
        let f = 0.5 * (x.transpose() * p * &x)[(0, 0)] + DVector::from_row_slice(q).dot(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.map(|b| b.1)
}

#[test]
fn active_lower_bound() {
    let p = problem(&DMatrix::from_element(1, 1, 1.0), &[0.0], &DMatrix::from_element(1, 1, 1.0), &[1.0], &[INF]);
    let s = qp_solve(&p, None, &QpSettings::default()).unwrap();
    assert_eq!(s.status, QpStatus::Solved);
    assert!((s.x[0] - 1.0).abs() < 1e-9);
    assert!((s.y[0] + 1.0).abs() < 1e-9, "multiplier of an active lower bound is negative");
}

#[test]
fn equality_constrained_matches_kkt_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let n = rng.random_range(2..=10);
        let me = rng.random_range(1..n);
        let p = random_pd(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
        let b: Vec<f64> = (0..me).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut kkt = DMatrix::zeros(n + me, n + me);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        kkt.view_mut((n, 0), (me, n)).copy_from(&a);
        kkt.view_mut((0, n), (n, me)).copy_from(&a.transpose());
        let mut rhs = DVector::zeros(n + me);
        for j in 0..n {
            rhs[j] = -q[j];
        }
        for i in 0..me {
            rhs[n + i] = b[i];
        }
        let exact = kkt.lu().solve(&rhs).unwrap();
        let s = qp_solve(&problem(&p, &q, &a, &b, &b), None, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        for j in 0..n {
            assert!((s.x[j] - exact[j]).abs() < 1e-6);
        }
        for i in 0..me {
            assert!((s.y[i] - exact[n + i]).abs() < 1e-6);
        }
    }
}

#[test]
fn box_constrained_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..40 {
        let n = rng.random_range(1..=6);
        let p = random_pd(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = DMatrix::identity(n, n);
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let oracle = enumerate_active_sets(&p, &q, &a, &l, &u).unwrap();
        let s = qp_solve(&problem(&p, &q, &a, &l, &u), None, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        for j in 0..n {
            assert!((s.x[j] - oracle[j]).abs() < 1e-6, "{} vs {}", s.x[j], oracle[j]);
        }
    }
}

#[test]
fn general_inequalities_match_enumeration_and_warm_start_is_immediate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(1..=6);
        let p = random_pd(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let l: Vec<f64> = (0..m).map(|i| if i % 3 == 0 { -INF } else { rng.random_range(-1.0..-0.1) }).collect();
        let u: Vec<f64> = (0..m).map(|i| if i % 3 == 1 { INF } else { rng.random_range(0.1..1.0) }).collect();
        let prob = problem(&p, &q, &a, &l, &u);
        let oracle = enumerate_active_sets(&p, &q, &a, &l, &u).unwrap();
        let s = qp_solve(&prob, None, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!(s.primal_residual < 1e-6 && s.dual_residual < 1e-6);
        for j in 0..n {
            assert!((s.x[j] - oracle[j]).abs() < 1e-6);
        }
        let again = qp_solve(&prob, Some(&s), &QpSettings::default()).unwrap();
        assert_eq!(again.status, QpStatus::Solved);
        assert!(again.iterations <= 5, "warm start took {} iterations", again.iterations);
    }
}

#[test]
fn primal_infeasibility_is_certified() {
    let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
    let p = problem(&DMatrix::from_element(1, 1, 1.0), &[0.0], &a, &[1.0, -INF], &[INF, 0.0]);
    let s = qp_solve(&p, None, &QpSettings::default()).unwrap();
    assert_eq!(s.status, QpStatus::PrimalInfeasible);
}

#[test]
fn dual_infeasibility_is_certified() {
    // min -x with x ≥ 0 only: unbounded below.
    let p = problem(&DMatrix::zeros(1, 1), &[-1.0], &DMatrix::from_element(1, 1, 1.0), &[0.0], &[INF]);
    let s = qp_solve(&p, None, &QpSettings::default()).unwrap();
    assert_eq!(s.status, QpStatus::DualInfeasible);
}

#[test]
fn iteration_limit_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_pd(&mut rng, 5);
    let a = DMatrix::identity(5, 5);
    let prob = problem(&p, &[1.0, -2.0, 3.0, 0.5, -1.0], &a, &[-0.1; 5], &[0.1; 5]);
    let opts = QpSettings { max_iter: 2, ..QpSettings::default() };
    assert_eq!(qp_solve(&prob, None, &opts).unwrap().status, QpStatus::MaxIter);
}

#[test]
fn invalid_problems_are_rejected() {
    let one = DMatrix::from_element(1, 1, 1.0);
    assert!(qp_solve(&problem(&one, &[0.0], &one, &[1.0], &[0.0]), None, &QpSettings::default()).is_err());
    assert!(qp_solve(&problem(&-one.clone(), &[0.0], &one, &[0.0], &[1.0]), None, &QpSettings::default()).is_err());
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let a = DMatrix::identity(2, 2);
    assert!(qp_solve(&problem(&asym, &[0.0, 0.0], &a, &[0.0; 2], &[1.0; 2]), None, &QpSettings::default()).is_err());
    assert!(qp_solve(&problem(&one, &[0.0, 1.0], &one, &[0.0], &[1.0]), None, &QpSettings::default()).is_err());
}

#[test]
fn solve_is_deterministic_and_dump_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_pd(&mut rng, 4);
    let a = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
    let prob = problem(&p, &[1.0, 0.0, -1.0, 2.0], &a, &[-1.0, -INF, 0.2], &[1.0, 0.5, 0.2]);
    let s1 = qp_solve(&prob, None, &QpSettings::default()).unwrap();
    let s2 = qp_solve(&prob, None, &QpSettings::default()).unwrap();
    assert_eq!(s1.x, s2.x);
    assert_eq!(s1.y, s2.y);
    let text = dump_string(&prob);
    assert_eq!(parse_dump(&text).unwrap(), prob);
    assert!(parse_dump("garbage").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn solved_points_satisfy_kkt(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let p = random_pd(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let l = vec![-1.0; m];
        let u = vec![1.0; m];
        let s = qp_solve(&problem(&p, &q, &a, &l, &u), None, &QpSettings::default()).unwrap();
        prop_assert_eq!(s.status, QpStatus::Solved);
        let x = DVector::from_vec(s.x.clone());
        let y = DVector::from_vec(s.y.clone());
        let ax = &a * &x;
        for i in 0..m {
            prop_assert!(ax[i] >= l[i] - 1e-6 && ax[i] <= u[i] + 1e-6);
        }
        let stat = &p * &x + DVector::from_vec(q) + a.transpose() * &y;
        prop_assert!(stat.amax() < 1e-6);
    }
}
