use gpmpc_core::gp::*;
use gpmpc_core::sparse_gp::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, nw: usize, nz: usize, lo: f64, hi: f64) -> Dataset {
    let x = DMatrix::from_fn(n, nw, |_, _| rng.random_range(lo..hi));
    let y = DMatrix::from_fn(n, nz, |i, j| (x[(i, 0)] * (1.0 + j as f64)).sin() + 0.1 * rng.random_range(-1.0..1.0));
    Dataset::new(x, y).unwrap()
}

/// Direct N×N evaluation of the negative VFE bound.
fn dense_vfe(d: &Dataset, h: &Hyperparams, u: &DMatrix<f64>, out: usize) -> (f64, f64) {
    let n = d.len();
    let kuu = kernel_matrix(h, u, u);
    let kuf = kernel_matrix(h, u, &d.inputs);
    let kff = kernel_matrix(h, &d.inputs, &d.inputs);
    let q = kuf.transpose() * kuu.clone().try_inverse().unwrap() * &kuf;
    let c = &q + DMatrix::identity(n, n) * h.noise_variance;
    let y = d.output(out);
    let logdet = c.determinant().ln();
    let quad = y.dot(&(c.clone().try_inverse().unwrap() * &y));
    let tr = 0.5 * (kff - q).trace() / h.noise_variance;
    (0.5 * logdet + 0.5 * quad + tr, tr)
}

#[test]
fn woodbury_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let d = random_dataset(&mut rng, 30, 2, 1, -2.0, 2.0);
        let h = Hyperparams::new(rng.random_range(0.5..2.0), rng.random_range(0.05..0.3), vec![0.8, 1.2]).unwrap();
        let u = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-2.0..2.0));
        let f = vfe_objective(&d, &h, &u, 0).unwrap();
        let (fd, _) = dense_vfe(&d, &h, &u, 0);
        assert!((f - fd).abs() / fd.abs() < 1e-8, "{f} vs {fd}");
    }
}

#[test]
fn zero_targets_leave_only_log_and_trace_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut d = random_dataset(&mut rng, 20, 2, 1, -2.0, 2.0);
    d.outputs.fill(0.0);
    let h = Hyperparams::new(1.0, 0.1, vec![1.0, 1.0]).unwrap();
    let u = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-2.0..2.0));
    let f = vfe_objective(&d, &h, &u, 0).unwrap();
    let (fd, _) = dense_vfe(&d, &h, &u, 0);
    assert!((f - fd).abs() / fd.abs() < 1e-8);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let d = random_dataset(&mut rng, 25, 2, 1, -2.0, 2.0);
        let h = Hyperparams::new(rng.random_range(0.5..2.0), rng.random_range(0.05..0.3), vec![0.8, 1.5]).unwrap();
        let u = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-2.0..2.0));
        let (_, g, gu) = vfe_objective_grad(&d, &h, &u, 0).unwrap();
        let x = h.to_log();
        let e = 1e-5;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += e;
            let mut xm = x.clone();
            xm[k] -= e;
            let fd = (vfe_objective(&d, &Hyperparams::from_log(&xp), &u, 0).unwrap()
                - vfe_objective(&d, &Hyperparams::from_log(&xm), &u, 0).unwrap())
                / (2.0 * e);
            assert!((fd - g[k]).abs() / g[k].abs().max(1e-2) < 1e-5, "θ{k}: {} vs {fd}", g[k]);
        }
        for a in 0..u.nrows() {
            for j in 0..u.ncols() {
                let mut up = u.clone();
                up[(a, j)] += e;
                let mut um = u.clone();
                um[(a, j)] -= e;
                let fd = (vfe_objective(&d, &h, &up, 0).unwrap() - vfe_objective(&d, &h, &um, 0).unwrap()) / (2.0 * e);
                assert!((fd - gu[(a, j)]).abs() / gu[(a, j)].abs().max(1e-2) < 1e-5, "u{a},{j}: {} vs {fd}", gu[(a, j)]);
            }
        }
    }
}

/// Well-spaced inputs keep K_ww comfortably invertible without noise.
fn spaced_dataset(n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { i as f64 * 0.7 } else { rng.random_range(-0.3..0.3) });
    let y = DMatrix::from_fn(n, 2, |i, j| (x[(i, 0)] + j as f64).sin() + x[(i, 1)] + 0.1 * rng.random_range(-1.0..1.0));
    Dataset::new(x, y).unwrap()
}

#[test]
fn exact_at_inducing_equal_training_inputs() {
    let d = spaced_dataset(40);
    let hs = vec![
        Hyperparams::new(1.2, 0.05, vec![0.6, 1.0]).unwrap(),
        Hyperparams::new(0.7, 0.02, vec![0.9, 2.0]).unwrap(),
    ];
    let full = gp_fit(&d, &hs).unwrap();
    let sparse = SparseGpModel::build(&d, &hs, &[d.inputs.clone(), d.inputs.clone()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let q = [rng.random_range(-1.0..29.0), rng.random_range(-0.5..0.5)];
        let (mf, vf) = gp_predict(&full, &q).unwrap();
        let (ms, vs) = sparse_predict(&sparse, &q).unwrap();
        for i in 0..2 {
            assert!((mf[i] - ms[i]).abs() <= 1e-6 * mf[i].abs().max(1e-3), "mean {} vs {}", mf[i], ms[i]);
            assert!((vf[i] - vs[i]).abs() <= 1e-6 * vf[i], "var {} vs {}", vf[i], vs[i]);
        }
    }
    for i in 0..2 {
        let f = vfe_objective(&d, &hs[i], &d.inputs, i).unwrap();
        let full_nlml = nlml(&d, &hs[i], i).unwrap();
        assert!((f - full_nlml).abs() < 1e-6 * full_nlml.abs().max(1.0));
        let (_, tr) = dense_vfe(&d, &hs[i], &d.inputs, i);
        assert!(tr.abs() < 1e-8, "trace term {tr}");
        let (_, gs, _) = vfe_objective_grad(&d, &hs[i], &d.inputs, i).unwrap();
        let (_, gf) = nlml_with_grad(&d, &hs[i], i).unwrap();
        for k in 0..gs.len() {
            assert!((gs[k] - gf[k]).abs() < 1e-6, "grad {k}: {} vs {}", gs[k], gf[k]);
        }
    }
}

#[test]
fn training_without_inducing_optimization_at_full_rank_is_exact() {
    let d = spaced_dataset(12);
    let hs = vec![Hyperparams::new(1.0, 0.05, vec![0.6, 1.0]).unwrap(); 2];
    let opts = SparseTrainOptions { optimize_inducing: false, ..Default::default() };
    let (model, _) = train_sparse(&d, 12, &hs, &opts).unwrap();
    let full = gp_fit(&d, &model.outputs.iter().map(|o| o.hyperparams.clone()).collect::<Vec<_>>()).unwrap();
    for q in [[1.0, 0.1], [3.3, -0.2], [7.9, 0.0]] {
        let (mf, vf) = gp_predict(&full, &q).unwrap();
        let (ms, vs) = sparse_predict(&model, &q).unwrap();
        for i in 0..2 {
            assert!((mf[i] - ms[i]).abs() <= 1e-6 * mf[i].abs().max(1e-3));
            assert!((vf[i] - vs[i]).abs() <= 1e-6 * vf[i]);
        }
    }
}

#[test]
fn far_query_recovers_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let d = random_dataset(&mut rng, 20, 2, 1, -1.0, 1.0);
    let h = Hyperparams::new(0.9, 0.1, vec![0.5, 0.5]).unwrap();
    let u = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
    let m = SparseGpModel::build(&d, &[h], &[u]).unwrap();
    let (mu, var) = sparse_predict(&m, &[500.0, 500.0]).unwrap();
    assert!(mu[0].abs() < 1e-12);
    assert!((var[0] - 1.0).abs() < 1e-12);
}

#[test]
fn single_inducing_point_closed_form() {
    let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, -1.0]);
    let y = DMatrix::from_row_slice(3, 1, &[0.4, 0.2, -0.3]);
    let d = Dataset::new(x.clone(), y.clone()).unwrap();
    let h = Hyperparams::new(1.3, 0.2, vec![0.7]).unwrap();
    let u = 0.25;
    let m = SparseGpModel::build(&d, &[h], &[DMatrix::from_element(1, 1, u)]).unwrap();
    let k = |a: f64, b: f64| 1.3 * (-0.5 * (a - b) * (a - b) / 0.7).exp();
    let kuu = k(u, u);
    let kuf: Vec<f64> = (0..3).map(|j| k(u, x[(j, 0)])).collect();
    let s = kuu + kuf.iter().map(|v| v * v).sum::<f64>() / 0.2;
    let alpha = kuf.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() / (0.2 * s);
    let q = 0.9;
    let kq = k(q, u);
    let mean = kq * alpha;
    let var = 1.3 + 0.2 - kq * kq * (1.0 / kuu - 1.0 / s);
    let (mu, v) = sparse_predict(&m, &[q]).unwrap();
    assert!((m.outputs[0].kuu_inv[(0, 0)] - 1.0 / kuu).abs() < 1e-12);
    assert!((m.outputs[0].s_inv[(0, 0)] - 1.0 / s).abs() < 1e-12);
    assert!((mu[0] - mean).abs() < 1e-13);
    assert!((v[0] - var).abs() < 1e-13);
}

#[test]
fn cached_matrices_symmetric_and_variance_reduction_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let d = random_dataset(&mut rng, 40, 3, 2, -2.0, 2.0);
    let init: Vec<_> = (0..2).map(|i| Hyperparams::heuristic(&d, i)).collect();
    let (m, _) = train_sparse(&d, 4, &init, &SparseTrainOptions::default()).unwrap();
    for o in &m.outputs {
        assert!((&o.kuu_inv - o.kuu_inv.transpose()).amax() < 1e-12);
        assert!((&o.s_inv - o.s_inv.transpose()).amax() < 1e-12);
        assert!(o.var_weights.clone().symmetric_eigen().eigenvalues.min() >= -1e-9);
    }
    for _ in 0..100 {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, v) = sparse_predict(&m, &q).unwrap();
        assert!(v.iter().all(|&x| x > 0.0));
    }
}

/// The standard VFE predictive variance can fall below the exact posterior
/// variance near inducing inputs (the projected-process likelihood ignores
/// the `K_ww − Q` residual when conditioning the inducing values), so this
/// property does not hold in general. Kept as a record; run with `--ignored`
/// to see the counterexample.
#[test]
#[ignore = "VFE predictive variance is not bounded below by the exact posterior variance in general"]
fn variance_dominates_full_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let d = random_dataset(&mut rng, 40, 2, 1, -2.0, 2.0);
    let h = Hyperparams::new(1.0, 0.05, vec![0.7, 0.7]).unwrap();
    let u = kmeans_centers(&d.inputs, 6, 0, 10);
    let sparse = SparseGpModel::build(&d, &[h.clone()], &[u]).unwrap();
    let full = gp_fit(&d, &[h]).unwrap();
    for _ in 0..2000 {
        let q = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let (_, vs) = sparse_predict(&sparse, &q).unwrap();
        let (_, vf) = gp_predict(&full, &q).unwrap();
        assert!(vs[0] >= vf[0] - 1e-8);
    }
}

#[test]
fn variance_matches_full_posterior_at_full_rank() {
    let d = spaced_dataset(25);
    let d = Dataset::new(d.inputs.clone(), d.outputs.columns(0, 1).into_owned()).unwrap();
    let h = Hyperparams::new(1.0, 0.05, vec![0.6, 1.0]).unwrap();
    let sparse = SparseGpModel::build(&d, &[h.clone()], &[d.inputs.clone()]).unwrap();
    let full = gp_fit(&d, &[h]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let q = [rng.random_range(-1.0..18.0), rng.random_range(-1.0..1.0)];
        let (_, vs) = sparse_predict(&sparse, &q).unwrap();
        let (_, vf) = gp_predict(&full, &q).unwrap();
        assert!(vs[0] >= vf[0] - 1e-8);
    }
}

#[test]
fn serialization_roundtrip_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let d = random_dataset(&mut rng, 30, 3, 3, -2.0, 2.0);
    let init: Vec<_> = (0..3).map(|i| Hyperparams::heuristic(&d, i)).collect();
    let opts = SparseTrainOptions { lbfgs: gpmpc_core::optim::LbfgsOptions { max_iters: 30, ..Default::default() }, ..Default::default() };
    let (m, _) = train_sparse(&d, 4, &init, &opts).unwrap();
    let back = SparseGpModel::from_json(&m.to_json().unwrap()).unwrap();
    for _ in 0..20 {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = sparse_predict(&m, &q).unwrap();
        let b = sparse_predict(&back, &q).unwrap();
        for i in 0..3 {
            assert_eq!(a.0[i].to_bits(), b.0[i].to_bits());
            assert_eq!(a.1[i].to_bits(), b.1[i].to_bits());
        }
    }
    assert!(SparseGpModel::from_json("{\"format\":\"other\",\"version\":1,\"outputs\":[]}").is_err());
}

#[test]
fn shared_inducing_set_is_used_by_all_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let d = random_dataset(&mut rng, 30, 2, 2, -2.0, 2.0);
    let init: Vec<_> = (0..2).map(|i| Hyperparams::heuristic(&d, i)).collect();
    let opts = SparseTrainOptions { shared_inducing: true, ..Default::default() };
    let (m, rep) = train_sparse(&d, 3, &init, &opts).unwrap();
    assert_eq!(m.outputs[0].inducing_inputs, m.outputs[1].inducing_inputs);
    assert!(rep.optimizer[0].f_final <= rep.optimizer[0].f_initial);
}

#[test]
fn sparse_rmse_close_to_full_gp() {
    let truth = Hyperparams::new(1.0, 0.01, vec![0.7]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let n_all = 160;
    let x = DMatrix::from_fn(n_all, 1, |_, _| rng.random_range(0.0..3.0));
    let mut k = kernel_matrix(&truth, &x, &x);
    for i in 0..n_all {
        k[(i, i)] += 1e-10;
    }
    let f = k.cholesky().unwrap().l() * DVector::from_fn(n_all, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n_all, |i, _| f[i] + 0.1 * rng.sample::<f64, _>(StandardNormal));
    let train_idx: Vec<usize> = (0..100).collect();
    let all = Dataset::new(x, DMatrix::from_column_slice(n_all, 1, y.as_slice())).unwrap();
    let d = all.subset(&train_idx);
    let init = vec![Hyperparams::heuristic(&d, 0)];
    let (hfull, _) = train_full(&d, &init, &TrainOptions::default()).unwrap();
    let full = gp_fit(&d, &hfull).unwrap();
    let (sparse, _) = train_sparse(&d, 4, &init, &SparseTrainOptions::default()).unwrap();
    let (mut ef, mut es) = (0.0, 0.0);
    for j in 100..n_all {
        let q = all.input(j);
        ef += (gp_predict(&full, &q).unwrap().0[0] - f[j]).powi(2);
        es += (sparse_predict(&sparse, &q).unwrap().0[0] - f[j]).powi(2);
    }
    let (rf, rs) = ((ef / 60.0).sqrt(), (es / 60.0).sqrt());
    assert!(rs <= 2.0 * rf, "sparse {rs} vs full {rf}");
}
