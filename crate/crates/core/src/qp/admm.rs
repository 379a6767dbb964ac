use super::csc::{sym_upper_mul_vec, CscMatrix};
use super::ldl::{LdlFactor, LdlSymbolic};
use super::{norm_inf, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::error::{Error, Result};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const SCALING_MIN: f64 = 1e-4;
const SCALING_MAX: f64 = 1e4;

/// Reusable ADMM solver. The symbolic factorization of the KKT matrix is
/// cached and reused while the sparsity pattern is unchanged.
pub struct QpSolver {
    pub settings: QpSettings,
    symbolic: Option<LdlSymbolic>,
}

/// Ruiz-equilibrated problem: `P̄ = c D P D`, `q̄ = c D q`, `Ā = E A D`,
/// `l̄ = E l`, `ū = E u`.
struct Scaled {
    p_upper: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    at: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn clamp_scaling(v: f64) -> f64 {
    if v < SCALING_MIN {
        1.0
    } else {
        v.min(SCALING_MAX)
    }
}

fn scale_problem(p: &QpProblem, iters: usize) -> Scaled {
    let (n, m) = (p.num_vars(), p.num_constraints());
    let mut pm = p.p.clone();
    let mut am = p.a.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    let mut q: Vec<f64> = p.q.clone();
    for _ in 0..iters {
        let pn = pm.col_norms_inf();
        let an = am.col_norms_inf();
        let dd: Vec<f64> = (0..n).map(|j| 1.0 / clamp_scaling(pn[j].max(an[j])).sqrt()).collect();
        let ee: Vec<f64> = am.row_norms_inf().iter().map(|&r| 1.0 / clamp_scaling(r).sqrt()).collect();
        pm.scale(&dd, &dd);
        am.scale(&ee, &dd);
        for j in 0..n {
            d[j] *= dd[j];
            q[j] *= dd[j];
        }
        for i in 0..m {
            e[i] *= ee[i];
        }
        let pn = pm.col_norms_inf();
        let mean = if n > 0 { pn.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let gamma = 1.0 / clamp_scaling(mean.max(norm_inf(&q)));
        for v in pm.values.iter_mut() {
            *v *= gamma;
        }
        for v in q.iter_mut() {
            *v *= gamma;
        }
        c *= gamma;
    }
    let l = (0..m).map(|i| e[i] * p.l[i]).collect();
    let u = (0..m).map(|i| e[i] * p.u[i]).collect();
    let at = am.transpose();
    Scaled { p_upper: pm.upper_triangle(), q, a: am, at, l, u, d, e, c }
}

/// KKT matrix `[[P̄ + σI, Āᵀ], [Ā, −diag(1/ρ)]]` (upper triangle) plus the
/// value positions of the `−1/ρ` diagonal.
fn build_kkt(s: &Scaled, sigma: f64, rho: &[f64]) -> (CscMatrix, Vec<usize>) {
    let n = s.q.len();
    let m = rho.len();
    let mut t: Vec<(usize, usize, f64)> = s.p_upper.iter().collect();
    t.extend((0..n).map(|j| (j, j, sigma)));
    t.extend(s.at.iter().map(|(r, c, v)| (r, n + c, v)));
    t.extend((0..m).map(|i| (n + i, n + i, -1.0 / rho[i])));
    let k = CscMatrix::from_triplets(n + m, n + m, &t);
    let diag = (0..m).map(|i| k.colptr[n + i + 1] - 1).collect();
    (k, diag)
}

fn rho_vector(p: &QpProblem, rho: f64) -> Vec<f64> {
    (0..p.num_constraints())
        .map(|i| {
            let (l, u) = (p.l[i], p.u[i]);
            if l == f64::NEG_INFINITY && u == f64::INFINITY {
                RHO_MIN
            } else if u - l < 1e-12 {
                RHO_EQ_FACTOR * rho
            } else {
                rho
            }
        })
        .collect()
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
    /// Normalized residuals in scaled space, for step-size adaptation.
    prim_rel: f64,
    dual_rel: f64,
}

fn residuals(s: &Scaled, x: &[f64], z: &[f64], y: &[f64], opts: &QpSettings) -> Residuals {
    let (n, m) = (x.len(), z.len());
    let ax = s.a.mul_vec(x);
    let px = sym_upper_mul_vec(&s.p_upper, x);
    let aty = s.at.mul_vec(y);
    let mut prim = 0.0f64;
    let mut ax_n = 0.0f64;
    let mut z_n = 0.0f64;
    let mut prim_s = 0.0f64;
    let mut ax_s = 0.0f64;
    let mut z_s = 0.0f64;
    for i in 0..m {
        let ie = 1.0 / s.e[i];
        prim = prim.max(((ax[i] - z[i]) * ie).abs());
        ax_n = ax_n.max((ax[i] * ie).abs());
        z_n = z_n.max((z[i] * ie).abs());
        prim_s = prim_s.max((ax[i] - z[i]).abs());
        ax_s = ax_s.max(ax[i].abs());
        z_s = z_s.max(z[i].abs());
    }
    let ic = 1.0 / s.c;
    let mut dual = 0.0f64;
    let (mut px_n, mut aty_n, mut q_n) = (0.0f64, 0.0f64, 0.0f64);
    let (mut dual_s, mut px_s, mut aty_s, mut q_s) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for j in 0..n {
        let id = ic / s.d[j];
        let r = px[j] + s.q[j] + aty[j];
        dual = dual.max((r * id).abs());
        px_n = px_n.max((px[j] * id).abs());
        aty_n = aty_n.max((aty[j] * id).abs());
        q_n = q_n.max((s.q[j] * id).abs());
        dual_s = dual_s.max(r.abs());
        px_s = px_s.max(px[j].abs());
        aty_s = aty_s.max(aty[j].abs());
        q_s = q_s.max(s.q[j].abs());
    }
    Residuals {
        prim,
        dual,
        eps_prim: opts.eps_abs + opts.eps_rel * ax_n.max(z_n),
        eps_dual: opts.eps_abs + opts.eps_rel * px_n.max(aty_n).max(q_n),
        prim_rel: prim_s / ax_s.max(z_s).max(1e-10),
        dual_rel: dual_s / px_s.max(aty_s).max(q_s).max(1e-10),
    }
}

fn primal_infeasible(s: &Scaled, dy: &[f64], eps: f64) -> bool {
    let m = dy.len();
    // Unscaled direction, projected onto the cone allowed by infinite bounds.
    let du: Vec<f64> = (0..m)
        .map(|i| {
            let v = s.e[i] * dy[i];
            if s.u[i] == f64::INFINITY && v > 0.0 {
                0.0
            } else if s.l[i] == f64::NEG_INFINITY && v < 0.0 {
                0.0
            } else {
                v
            }
        })
        .collect();
    let norm = norm_inf(&du);
    if norm < 1e-12 {
        return false;
    }
    let mut support = 0.0;
    for i in 0..m {
        let ul = s.u[i] / s.e[i];
        let ll = s.l[i] / s.e[i];
        if du[i] > 0.0 {
            support += ul * du[i];
        } else if du[i] < 0.0 {
            support += ll * du[i];
        }
    }
    if support >= -eps * norm {
        return false;
    }
    // Aᵀδy = D⁻¹ Āᵀ E⁻¹ δy_unscaled
    let scaled: Vec<f64> = (0..m).map(|i| du[i] / s.e[i]).collect();
    let aty = s.at.mul_vec(&scaled);
    aty.iter().zip(&s.d).all(|(v, d)| (v / d).abs() <= eps * norm)
}

fn dual_infeasible(s: &Scaled, dx: &[f64], eps: f64) -> bool {
    let n = dx.len();
    let du: Vec<f64> = (0..n).map(|j| s.d[j] * dx[j]).collect();
    let norm = norm_inf(&du);
    if norm < 1e-12 {
        return false;
    }
    let qdx: f64 = (0..n).map(|j| s.q[j] * dx[j]).sum::<f64>() / s.c;
    if qdx >= -eps * norm {
        return false;
    }
    let pdx = sym_upper_mul_vec(&s.p_upper, dx);
    if (0..n).any(|j| (pdx[j] / (s.d[j] * s.c)).abs() > eps * norm) {
        return false;
    }
    let adx = s.a.mul_vec(dx);
    (0..adx.len()).all(|i| {
        let v = adx[i] / s.e[i];
        let lo_ok = s.l[i] == f64::NEG_INFINITY || v >= -eps * norm;
        let hi_ok = s.u[i] == f64::INFINITY || v <= eps * norm;
        lo_ok && hi_ok
    })
}

fn project(v: f64, l: f64, u: f64) -> f64 {
    v.max(l).min(u)
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        QpSolver { settings, symbolic: None }
    }

    /// Factorizes the KKT matrix; quasi-definiteness requires exactly
    /// `n_vars` positive pivots.
    fn factor(&mut self, k: &CscMatrix, n_vars: usize) -> Result<LdlFactor> {
        if !self.symbolic.as_ref().is_some_and(|s| s.matches(k)) {
            self.symbolic = Some(LdlSymbolic::new(k)?);
        }
        let f = LdlFactor::new(self.symbolic.as_ref().unwrap(), k)?;
        if f.positive_pivots() != n_vars {
            return Err(Error::Numerical("KKT matrix is not quasi-definite".into()));
        }
        Ok(f)
    }

    /// Solves `p`, optionally warm-started from a previous solution of a
    /// problem with the same dimensions.
    pub fn solve(&mut self, p: &QpProblem, warm_start: Option<&QpSolution>) -> Result<QpSolution> {
        p.validate()?;
        let opts = self.settings.clone();
        let (n, m) = (p.num_vars(), p.num_constraints());
        let s = scale_problem(p, opts.scaling_iters);

        let mut rho_s = opts.rho;
        let (mut x, mut y) = (vec![0.0; n], vec![0.0; m]);
        if let Some(w) = warm_start.filter(|w| w.x.len() == n && w.y.len() == m) {
            for j in 0..n {
                x[j] = w.x[j] / s.d[j];
            }
            for i in 0..m {
                y[i] = s.c * w.y[i] / s.e[i];
            }
            if w.rho.is_finite() && w.rho > 0.0 {
                rho_s = w.rho.clamp(RHO_MIN, RHO_MAX);
            }
        }
        let mut z: Vec<f64> = s.a.mul_vec(&x).iter().enumerate().map(|(i, &v)| project(v, s.l[i], s.u[i])).collect();

        let mut rho = rho_vector(p, rho_s);
        let (mut kkt, diag_pos) = build_kkt(&s, opts.sigma, &rho);
        let mut fac = self.factor(&kkt, n)?;

        let mut status = QpStatus::MaxIter;
        let mut iterations = 0;
        let mut res = residuals(&s, &x, &z, &y, &opts);
        let mut rhs = vec![0.0; n + m];
        for k in 1..=opts.max_iter {
            iterations = k;
            for j in 0..n {
                rhs[j] = opts.sigma * x[j] - s.q[j];
            }
            for i in 0..m {
                rhs[n + i] = z[i] - y[i] / rho[i];
            }
            fac.solve_in_place(&mut rhs);
            let mut dx = vec![0.0; n];
            for j in 0..n {
                let xn = opts.alpha * rhs[j] + (1.0 - opts.alpha) * x[j];
                dx[j] = xn - x[j];
                x[j] = xn;
            }
            let mut dy = vec![0.0; m];
            for i in 0..m {
                let zt = z[i] + (rhs[n + i] - y[i]) / rho[i];
                let zr = opts.alpha * zt + (1.0 - opts.alpha) * z[i];
                let zn = project(zr + y[i] / rho[i], s.l[i], s.u[i]);
                let yn = y[i] + rho[i] * (zr - zn);
                dy[i] = yn - y[i];
                y[i] = yn;
                z[i] = zn;
            }
            res = residuals(&s, &x, &z, &y, &opts);
            if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
                status = QpStatus::Solved;
                break;
            }
            if primal_infeasible(&s, &dy, opts.eps_prim_inf) {
                status = QpStatus::PrimalInfeasible;
                break;
            }
            if dual_infeasible(&s, &dx, opts.eps_dual_inf) {
                status = QpStatus::DualInfeasible;
                break;
            }
            if opts.adaptive_rho && k % opts.adaptive_rho_interval == 0 {
                let ratio = (res.prim_rel / res.dual_rel.max(1e-30)).sqrt();
                let new_rho = (rho_s * ratio).clamp(RHO_MIN, RHO_MAX);
                if new_rho > rho_s * opts.adaptive_rho_tolerance || new_rho < rho_s / opts.adaptive_rho_tolerance {
                    rho_s = new_rho;
                    rho = rho_vector(p, rho_s);
                    for (i, &pos) in diag_pos.iter().enumerate() {
                        kkt.values[pos] = -1.0 / rho[i];
                    }
                    fac = self.factor(&kkt, n)?;
                }
            }
        }

        let mut polished = false;
        if status == QpStatus::Solved && opts.polish && m + n > 0 {
            if let Some((xp, yp, zp)) = polish(&s, &x, &z, &y, &opts) {
                let rp = residuals(&s, &xp, &zp, &yp, &opts);
                if rp.prim <= res.prim.max(1e-10) && rp.dual <= res.dual.max(1e-10) {
                    x = xp;
                    y = yp;
                    res = rp;
                    polished = true;
                }
            }
        }

        let xu: Vec<f64> = (0..n).map(|j| x[j] * s.d[j]).collect();
        let yu: Vec<f64> = (0..m).map(|i| y[i] * s.e[i] / s.c).collect();
        let objective = p.objective(&xu);
        Ok(QpSolution {
            x: xu,
            y: yu,
            status,
            iterations,
            primal_residual: res.prim,
            dual_residual: res.dual,
            objective,
            rho: rho_s,
            polished,
        })
    }
}

/// Solves the equality-constrained problem on the guessed active set, with
/// iterative refinement against the unregularized KKT system.
fn polish(s: &Scaled, x: &[f64], z: &[f64], y: &[f64], opts: &QpSettings) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, m) = (x.len(), z.len());
    let mut active = Vec::new();
    for i in 0..m {
        let lower = z[i] - s.l[i] < -y[i];
        let upper = s.u[i] - z[i] < y[i];
        if lower || upper {
            let b = if s.u[i] - s.l[i] < 1e-12 {
                s.l[i]
            } else if upper {
                s.u[i]
            } else {
                s.l[i]
            };
            active.push((i, b, lower && !upper, upper && !lower));
        }
    }
    let na = active.len();
    let mut row_of = vec![usize::MAX; m];
    for (k, &(i, ..)) in active.iter().enumerate() {
        row_of[i] = k;
    }
    let delta = opts.polish_delta;
    let mut t: Vec<(usize, usize, f64)> = s.p_upper.iter().collect();
    let mut t0 = t.clone();
    t.extend((0..n).map(|j| (j, j, delta)));
    for (r, c, v) in s.at.iter() {
        if row_of[c] != usize::MAX {
            t.push((r, n + row_of[c], v));
            t0.push((r, n + row_of[c], v));
        }
    }
    t.extend((0..na).map(|k| (n + k, n + k, -delta)));
    let kd = CscMatrix::from_triplets(n + na, n + na, &t);
    let k0 = CscMatrix::from_triplets(n + na, n + na, &t0);
    let sym = LdlSymbolic::new(&kd).ok()?;
    let f = LdlFactor::new(&sym, &kd).ok()?;
    let mut rhs = vec![0.0; n + na];
    for j in 0..n {
        rhs[j] = -s.q[j];
    }
    for (k, &(_, b, ..)) in active.iter().enumerate() {
        rhs[n + k] = b;
    }
    let mut sol = rhs.clone();
    f.solve_in_place(&mut sol);
    for _ in 0..opts.polish_refine_iters {
        let ks = sym_upper_mul_vec(&k0, &sol);
        let mut r: Vec<f64> = rhs.iter().zip(&ks).map(|(a, b)| a - b).collect();
        f.solve_in_place(&mut r);
        for (v, d) in sol.iter_mut().zip(&r) {
            *v += d;
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let xp = sol[..n].to_vec();
    let mut yp = vec![0.0; m];
    for (k, &(i, _, lower_only, upper_only)) in active.iter().enumerate() {
        let v = sol[n + k];
        let tol = opts.eps_abs * s.c / s.e[i];
        if (lower_only && v > tol) || (upper_only && v < -tol) {
            return None;
        }
        yp[i] = v;
    }
    let zp = s.a.mul_vec(&xp).iter().enumerate().map(|(i, &v)| project(v, s.l[i], s.u[i])).collect();
    Some((xp, yp, zp))
}
