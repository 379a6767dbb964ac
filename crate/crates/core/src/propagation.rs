//! Gaussian belief propagation through the GP-augmented dynamics
//! `x⁺ = f_d(x, u) + T_d B_z z`, with `z` the sparse GP output at the
//! (uncertain) GP input.
//!
//! Every map is generic over [`Real`] so that exact Jacobians (and, for the
//! covariance map, Jacobians of a map that itself contains `∇f_d`) come from
//! forward-mode dual arithmetic.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense::{dot, Cholesky, Mat};
use crate::error::{dim_check, Error, Result};
use crate::scalar::{Dual, Real};
use crate::sparse_gp::SparseGpModel;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn deterministic(mean: DVector<f64>) -> Self {
        let n = mean.len();
        GaussianBelief { mean, covariance: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    Taylor,
    #[serde(alias = "moment_matching")]
    Mm,
}

/// Discrete-time nominal dynamics `x⁺ = f_d(x, u)`.
pub trait NominalModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval<S: Real>(&self, x: &[S], u: &[S]) -> Vec<S>;

    /// `∇_w f_d` with `w = (x, u)`, n_x × (n_x + n_u), by forward mode.
    fn jacobian<S: Real>(&self, x: &[S], u: &[S]) -> Mat<S> {
        let (nx, nu) = (x.len(), u.len());
        let mut jac = Mat::zeros(self.state_dim(), nx + nu);
        let mut xd: Vec<Dual<S>> = x.iter().map(|&v| Dual::constant(v)).collect();
        let mut ud: Vec<Dual<S>> = u.iter().map(|&v| Dual::constant(v)).collect();
        for k in 0..nx + nu {
            if k < nx {
                xd[k].du = S::one();
            } else {
                ud[k - nx].du = S::one();
            }
            let f = self.eval(&xd, &ud);
            for (r, fr) in f.iter().enumerate() {
                jac[(r, k)] = fr.du;
            }
            if k < nx {
                xd[k].du = S::zero();
            } else {
                ud[k - nx].du = S::zero();
            }
        }
        jac
    }
}

/// `x⁺ = A x + B u`
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl NominalModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn eval<S: Real>(&self, x: &[S], u: &[S]) -> Vec<S> {
        (0..self.a.nrows())
            .map(|r| {
                let mut acc = S::zero();
                for c in 0..self.a.ncols() {
                    acc += x[c].scale(self.a[(r, c)]);
                }
                for c in 0..self.b.ncols() {
                    acc += u[c].scale(self.b[(r, c)]);
                }
                acc
            })
            .collect()
    }
}

/// Moments of the GP output under a Gaussian GP input.
///
/// The cross-covariance between any variable `v` jointly Gaussian with the GP
/// input `g` and the output `z` is `Cov(v, g) · cross_factor`.
#[derive(Clone, Debug)]
pub struct GpMoments<S> {
    pub mean: Vec<S>,
    pub cov: Mat<S>,
    /// n_g × n_z
    pub cross_factor: Mat<S>,
    pub clamped: usize,
}

/// Output of the public moment functions, in `f64`.
#[derive(Clone, Debug)]
pub struct GpOutputMoments {
    pub mu_z_bar: DVector<f64>,
    pub sigma_z_bar: DMatrix<f64>,
    /// n_w × n_z, covariance between the full input `w` and `z`.
    pub sigma_fz_bar: DMatrix<f64>,
    pub clamped: usize,
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Taylor moments: mean and variance evaluated at the input mean, plus the
/// linearized mean's contribution to the output covariance.
pub fn taylor_moments<S: Real>(gp: &SparseGpModel, mu: &[S], sigma: &Mat<S>) -> GpMoments<S> {
    let ng = mu.len();
    let nz = gp.output_dim();
    let mut mean = Vec::with_capacity(nz);
    let mut var = Vec::with_capacity(nz);
    let mut grad = Mat::zeros(nz, ng);
    for (i, o) in gp.outputs.iter().enumerate() {
        let h = &o.hyperparams;
        let m = o.num_inducing();
        let mut k = Vec::with_capacity(m);
        for tau in 0..m {
            let w = o.inducing_row(tau);
            let mut e = S::zero();
            for d in 0..ng {
                let diff = mu[d] - S::cst(w[d]);
                e += diff * diff * S::cst(0.5 / h.lengthscales[d]);
            }
            k.push((-e).exp().scale(h.signal_variance));
        }
        let mut mi = S::zero();
        for tau in 0..m {
            let ak = k[tau].scale(o.dual_weights[tau]);
            mi += ak;
            let w = o.inducing_row(tau);
            for d in 0..ng {
                let g = grad[(i, d)] + ak * (S::cst(w[d]) - mu[d]).scale(1.0 / h.lengthscales[d]);
                grad[(i, d)] = g;
            }
        }
        let mut quad = S::zero();
        for a in 0..m {
            let mut row = S::zero();
            for b in 0..m {
                row += k[b].scale(o.var_weights[(a, b)]);
            }
            quad += k[a] * row;
        }
        mean.push(mi);
        var.push(S::cst(h.signal_variance + h.noise_variance) - quad);
    }
    let gs = grad.matmul(sigma);
    let mut cov = gs.matmul(&grad.transpose());
    for i in 0..nz {
        let v = cov[(i, i)] + var[i];
        cov[(i, i)] = v;
    }
    GpMoments { mean, cov: cov.symmetrized(), cross_factor: grad.transpose(), clamped: 0 }
}

/// Exact first and second moments of the sparse GP output under
/// `g ~ N(mu, sigma)`, and the input/output cross-covariance factor.
pub fn mm_moments<S: Real>(gp: &SparseGpModel, mu: &[S], sigma: &Mat<S>) -> Result<GpMoments<S>> {
    let (mean, cross) = mm_first_moments(gp, mu, sigma)?;
    let ng = mu.len();
    let nz = gp.output_dim();
    let mut cov = Mat::zeros(nz, nz);
    let mut clamped = 0;
    for i in 0..nz {
        for j in i..nz {
            let (oi, oj) = (&gp.outputs[i], &gp.outputs[j]);
            let (hi, hj) = (&oi.hyperparams, &oj.hyperparams);
            // F = (Λi⁻¹ + Λj⁻¹)⁻¹ + Σ
            let p: Vec<f64> = (0..ng).map(|d| 1.0 / hi.lengthscales[d] + 1.0 / hj.lengthscales[d]).collect();
            let mut f = sigma.clone();
            for d in 0..ng {
                let v = f[(d, d)] + S::cst(1.0 / p[d]);
                f[(d, d)] = v;
            }
            let fch = Cholesky::new(&f).ok_or_else(|| {
                Error::Numerical(format!("(Λ{i}⁻¹ + Λ{j}⁻¹)⁻¹ + Σ is not positive definite"))
            })?;
            let log_p: f64 = p.iter().map(|v| v.ln()).sum();
            let coef = (-(fch.logdet() + S::cst(log_p)).scale(0.5)).exp().scale(hi.signal_variance * hj.signal_variance);
            let (mi, mj) = (oi.num_inducing(), oj.num_inducing());
            let mut l = Mat::zeros(mi, mj);
            let mut r = vec![S::zero(); ng];
            for a in 0..mi {
                let wa = oi.inducing_row(a);
                for b in 0..mj {
                    let wb = oj.inducing_row(b);
                    let mut e = 0.0;
                    for d in 0..ng {
                        let ls = hi.lengthscales[d] + hj.lengthscales[d];
                        e += sq(wa[d] - wb[d]) / ls;
                        let q = (hj.lengthscales[d] * wa[d] + hi.lengthscales[d] * wb[d]) / ls;
                        r[d] = S::cst(q) - mu[d];
                    }
                    let y = fch.forward(&r);
                    let g = dot(&y, &y);
                    l[(a, b)] = coef * (-(g.scale(0.5))).exp().scale((-0.5 * e).exp());
                }
            }
            let mut quad = S::zero();
            for a in 0..mi {
                let mut row = S::zero();
                for b in 0..mj {
                    row += l[(a, b)].scale(oj.dual_weights[b]);
                }
                quad += row.scale(oi.dual_weights[a]);
            }
            if i == j {
                let mut tr = S::zero();
                for a in 0..mi {
                    for b in 0..mi {
                        tr += l[(a, b)].scale(oi.var_weights[(b, a)]);
                    }
                }
                let mut v = S::cst(hi.signal_variance + hi.noise_variance) + quad - mean[i] * mean[i] - tr;
                if v.re() < 0.0 {
                    log::warn!("moment-matched variance of output {i} is negative ({:e}); clamped", v.re());
                    v = S::cst(hi.noise_variance);
                    clamped += 1;
                }
                cov[(i, i)] = v;
            } else {
                let v = quad - mean[i] * mean[j];
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
    }
    Ok(GpMoments { mean, cov, cross_factor: cross, clamped })
}

/// Mean and cross-covariance factor only (the cheap part of moment matching).
fn mm_first_moments<S: Real>(gp: &SparseGpModel, mu: &[S], sigma: &Mat<S>) -> Result<(Vec<S>, Mat<S>)> {
    let ng = mu.len();
    let nz = gp.output_dim();
    let mut mean = Vec::with_capacity(nz);
    let mut cross = Mat::zeros(ng, nz);
    let mut d = vec![S::zero(); ng];
    for (i, o) in gp.outputs.iter().enumerate() {
        let h = &o.hyperparams;
        let mut b = sigma.clone();
        for k in 0..ng {
            let v = b[(k, k)] + S::cst(h.lengthscales[k]);
            b[(k, k)] = v;
        }
        let bch = Cholesky::new(&b)
            .ok_or_else(|| Error::Numerical(format!("Λ{i} + Σ is not positive definite")))?;
        // |Λ⁻¹Σ + I| = |Λ + Σ| / |Λ|
        let log_lam: f64 = h.lengthscales.iter().map(|v| v.ln()).sum();
        let coef = (-(bch.logdet() - S::cst(log_lam)).scale(0.5)).exp().scale(h.signal_variance);
        let mut mi = S::zero();
        for tau in 0..o.num_inducing() {
            let w = o.inducing_row(tau);
            for k in 0..ng {
                d[k] = S::cst(w[k]) - mu[k];
            }
            let s = bch.solve(&d);
            let lt = coef * (-(dot(&d, &s).scale(0.5))).exp();
            let al = lt.scale(o.dual_weights[tau]);
            mi += al;
            for k in 0..ng {
                let v = cross[(k, i)] + al * s[k];
                cross[(k, i)] = v;
            }
        }
        mean.push(mi);
    }
    Ok((mean, cross))
}

/// Nominal dynamics plus a sparse GP correction on selected state rows.
#[derive(Clone)]
pub struct AugmentedModel<N> {
    pub nominal: N,
    pub gp: Option<Arc<SparseGpModel>>,
    /// Indices into `w = (x, u)` forming the GP input.
    pub gp_inputs: Vec<usize>,
    /// State row receiving GP output `i` (the selection matrix `B_z`).
    pub selector: Vec<usize>,
    /// Scale `T_d` of the GP block.
    pub td: f64,
    pub mode: PropagationMode,
    /// Under Taylor propagation, take the input/output cross-covariance from
    /// moment matching instead of the linearization.
    pub taylor_cross_from_mm: bool,
}

impl<N: NominalModel> AugmentedModel<N> {
    pub fn nominal_only(nominal: N) -> Self {
        AugmentedModel {
            nominal,
            gp: None,
            gp_inputs: Vec::new(),
            selector: Vec::new(),
            td: 0.0,
            mode: PropagationMode::Taylor,
            taylor_cross_from_mm: false,
        }
    }

    pub fn with_gp(
        nominal: N,
        gp: Arc<SparseGpModel>,
        gp_inputs: Vec<usize>,
        selector: Vec<usize>,
        td: f64,
        mode: PropagationMode,
    ) -> Result<Self> {
        let nw = nominal.state_dim() + nominal.input_dim();
        dim_check("GP input indices", gp.input_dim(), gp_inputs.len())?;
        dim_check("selector rows", gp.output_dim(), selector.len())?;
        if gp_inputs.iter().any(|&i| i >= nw) || selector.iter().any(|&r| r >= nominal.state_dim()) {
            return Err(Error::Argument("GP input or selector index out of range".into()));
        }
        Ok(AugmentedModel { nominal, gp: Some(gp), gp_inputs, selector, td, mode, taylor_cross_from_mm: false })
    }

    pub fn state_dim(&self) -> usize {
        self.nominal.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.nominal.input_dim()
    }

    fn gp_belief<S: Real>(&self, mu: &[S], u: &[S], sigma: &Mat<S>) -> (Vec<S>, Mat<S>) {
        let nx = mu.len();
        let g: Vec<S> = self.gp_inputs.iter().map(|&k| if k < nx { mu[k] } else { u[k - nx] }).collect();
        let sg = Mat::from_fn(g.len(), g.len(), |a, b| {
            let (ka, kb) = (self.gp_inputs[a], self.gp_inputs[b]);
            if ka < nx && kb < nx {
                sigma[(ka, kb)]
            } else {
                S::zero()
            }
        });
        (g, sg)
    }

    fn gp_moments<S: Real>(&self, gp: &SparseGpModel, g: &[S], sg: &Mat<S>, need_cov: bool) -> Result<GpMoments<S>> {
        match self.mode {
            PropagationMode::Mm if need_cov => mm_moments(gp, g, sg),
            PropagationMode::Mm => {
                let (mean, cross) = mm_first_moments(gp, g, sg)?;
                let nz = mean.len();
                Ok(GpMoments { mean, cov: Mat::zeros(nz, nz), cross_factor: cross, clamped: 0 })
            }
            PropagationMode::Taylor => {
                let mut m = taylor_moments(gp, g, sg);
                if self.taylor_cross_from_mm && need_cov {
                    m.cross_factor = mm_first_moments(gp, g, sg)?.1;
                }
                Ok(m)
            }
        }
    }

    /// Mean map ϑ: next-state mean from `(μ_x, u, Σ_x)`. `sigma` is
    /// symmetrized before use.
    pub fn theta<S: Real>(&self, mu: &[S], u: &[S], sigma: &Mat<S>) -> Result<Vec<S>> {
        let mut next = self.nominal.eval(mu, u);
        if let Some(gp) = &self.gp {
            let sigma = sigma.symmetrized();
            let (g, sg) = self.gp_belief(mu, u, &sigma);
            let m = self.gp_moments(gp, &g, &sg, false)?;
            for (i, &r) in self.selector.iter().enumerate() {
                next[r] += m.mean[i].scale(self.td);
            }
        }
        Ok(next)
    }

    /// Mean map ϑ and covariance map ζ together.
    pub fn theta_zeta<S: Real>(&self, mu: &[S], u: &[S], sigma: &Mat<S>) -> Result<(Vec<S>, Mat<S>, usize)> {
        let nx = mu.len();
        let sigma = sigma.symmetrized();
        let mut next = self.nominal.eval(mu, u);
        let jac = self.nominal.jacobian(mu, u);
        let jx = Mat::from_fn(nx, nx, |r, c| jac[(r, c)]);
        let mut cov = jx.matmul(&sigma).matmul(&jx.transpose());
        let mut clamped = 0;
        if let Some(gp) = &self.gp {
            let (g, sg) = self.gp_belief(mu, u, &sigma);
            let m = self.gp_moments(gp, &g, &sg, true)?;
            clamped = m.clamped;
            let td = self.td;
            for (i, &r) in self.selector.iter().enumerate() {
                next[r] += m.mean[i].scale(td);
            }
            // Cov(x, g): state rows of the GP-input columns.
            let sxg = Mat::from_fn(nx, g.len(), |r, c| {
                let k = self.gp_inputs[c];
                if k < nx {
                    sigma[(r, k)]
                } else {
                    S::zero()
                }
            });
            let k = jx.matmul(&sxg).matmul(&m.cross_factor);
            for (i, &r) in self.selector.iter().enumerate() {
                for a in 0..nx {
                    let v = k[(a, i)].scale(td);
                    let ar = cov[(a, r)] + v;
                    cov[(a, r)] = ar;
                    let ra = cov[(r, a)] + v;
                    cov[(r, a)] = ra;
                }
                for (j, &rj) in self.selector.iter().enumerate() {
                    let v = cov[(r, rj)] + m.cov[(i, j)].scale(td * td);
                    cov[(r, rj)] = v;
                }
            }
        }
        Ok((next, cov.symmetrized(), clamped))
    }

    /// Joint moments of `(f_d(w), z)` at a state belief and deterministic input.
    pub fn joint_moments(&self, belief: &GaussianBelief, u: &[f64]) -> Result<JointMoments> {
        let nx = self.state_dim();
        dim_check("belief dimension", nx, belief.dim())?;
        dim_check("input dimension", self.input_dim(), u.len())?;
        let mu: Vec<f64> = belief.mean.iter().copied().collect();
        let sigma = Mat::from_dmatrix(&belief.covariance).symmetrized();
        let mu_f = DVector::from_vec(self.nominal.eval(&mu, u));
        let jac = self.nominal.jacobian(&mu, u);
        let jx = Mat::from_fn(nx, nx, |r, c| jac[(r, c)]);
        let sigma_f = jx.matmul(&sigma).matmul(&jx.transpose()).to_dmatrix();
        let gp_part = match &self.gp {
            Some(gp) => {
                let w = belief_w(belief, u);
                Some(match self.mode {
                    PropagationMode::Taylor => taylor_gp_moments(gp, &w, &self.gp_inputs)?,
                    PropagationMode::Mm => mm_gp_moments(gp, &w, &self.gp_inputs)?,
                })
            }
            None => None,
        };
        Ok(JointMoments { mu_f, sigma_f, gp: gp_part })
    }

    /// One step of the Gaussian recursion in `f64`; the covariance is
    /// symmetrized and its negative eigenvalues clamped to zero.
    pub fn step(&self, belief: &GaussianBelief, u: &[f64]) -> Result<StepResult> {
        let nx = self.state_dim();
        dim_check("belief dimension", nx, belief.dim())?;
        dim_check("input dimension", self.input_dim(), u.len())?;
        let mu: Vec<f64> = belief.mean.iter().copied().collect();
        let sigma = Mat::from_dmatrix(&belief.covariance);
        let (mean, cov, gp_clamped) = self.theta_zeta(&mu, u, &sigma)?;
        let (cov, eig_clamped) = clamp_psd(cov.to_dmatrix());
        Ok(StepResult {
            belief: GaussianBelief { mean: DVector::from_vec(mean), covariance: cov },
            variance_clamps: gp_clamped,
            eigen_clamps: eig_clamped,
        })
    }
}

/// Joint belief over `w = (x, u)` with a deterministic input.
pub fn belief_w(belief: &GaussianBelief, u: &[f64]) -> GaussianBelief {
    let nx = belief.dim();
    let nw = nx + u.len();
    let mut mean = DVector::zeros(nw);
    mean.rows_mut(0, nx).copy_from(&belief.mean);
    for (k, &v) in u.iter().enumerate() {
        mean[nx + k] = v;
    }
    let mut cov = DMatrix::zeros(nw, nw);
    cov.view_mut((0, 0), (nx, nx)).copy_from(&belief.covariance);
    GaussianBelief { mean, covariance: cov }
}

#[derive(Clone, Debug)]
pub struct JointMoments {
    pub mu_f: DVector<f64>,
    pub sigma_f: DMatrix<f64>,
    pub gp: Option<GpOutputMoments>,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub belief: GaussianBelief,
    pub variance_clamps: usize,
    pub eigen_clamps: usize,
}

fn clamp_psd(cov: DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let negative = eig.eigenvalues.iter().filter(|&&v| v < 0.0).count();
    if negative == 0 {
        return (sym, 0);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    ((&out + out.transpose()) * 0.5, negative)
}

fn gp_input_belief(gp: &SparseGpModel, w: &GaussianBelief, idx: &[usize]) -> Result<(Vec<f64>, Mat<f64>)> {
    dim_check("GP input indices", gp.input_dim(), idx.len())?;
    if idx.iter().any(|&k| k >= w.dim()) {
        return Err(Error::Argument("GP input index out of range".into()));
    }
    let mu: Vec<f64> = idx.iter().map(|&k| w.mean[k]).collect();
    let sg = Mat::from_fn(idx.len(), idx.len(), |a, b| 0.5 * (w.covariance[(idx[a], idx[b])] + w.covariance[(idx[b], idx[a])]));
    Ok((mu, sg))
}

fn to_output(w: &GaussianBelief, idx: &[usize], m: GpMoments<f64>) -> GpOutputMoments {
    let nw = w.dim();
    let swg = Mat::from_fn(nw, idx.len(), |r, c| w.covariance[(r, idx[c])]);
    GpOutputMoments {
        mu_z_bar: DVector::from_vec(m.mean),
        sigma_z_bar: m.cov.to_dmatrix(),
        sigma_fz_bar: swg.matmul(&m.cross_factor).to_dmatrix(),
        clamped: m.clamped,
    }
}

/// Taylor moments of the GP output; `gp_inputs` selects the GP input from `w`.
pub fn taylor_gp_moments(gp: &SparseGpModel, w: &GaussianBelief, gp_inputs: &[usize]) -> Result<GpOutputMoments> {
    let (mu, sg) = gp_input_belief(gp, w, gp_inputs)?;
    Ok(to_output(w, gp_inputs, taylor_moments(gp, &mu, &sg)))
}

/// Moment-matched GP output moments; `gp_inputs` selects the GP input from `w`.
pub fn mm_gp_moments(gp: &SparseGpModel, w: &GaussianBelief, gp_inputs: &[usize]) -> Result<GpOutputMoments> {
    let (mu, sg) = gp_input_belief(gp, w, gp_inputs)?;
    Ok(to_output(w, gp_inputs, mm_moments(gp, &mu, &sg)?))
}

/// Gradient of the sparse predictive mean at `w` (n_z × n_w).
pub fn mean_gradient(gp: &SparseGpModel, w: &[f64]) -> DMatrix<f64> {
    let m = taylor_moments(gp, w, &Mat::zeros(w.len(), w.len()));
    m.cross_factor.transpose().to_dmatrix()
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub beliefs: Vec<GaussianBelief>,
    pub variance_clamps: usize,
    pub eigen_clamps: usize,
}

/// Propagates a deterministic initial state through an input sequence.
pub fn rollout<N: NominalModel>(model: &AugmentedModel<N>, x0: &[f64], inputs: &[DVector<f64>]) -> Result<Rollout> {
    dim_check("initial state", model.state_dim(), x0.len())?;
    if !x0.iter().all(|v| v.is_finite()) || !inputs.iter().all(|u| u.iter().all(|v| v.is_finite())) {
        return Err(Error::Argument("rollout inputs must be finite".into()));
    }
    let mut beliefs = Vec::with_capacity(inputs.len() + 1);
    beliefs.push(GaussianBelief::deterministic(DVector::from_column_slice(x0)));
    let (mut vc, mut ec) = (0, 0);
    for u in inputs {
        let r = model.step(beliefs.last().unwrap(), u.as_slice())?;
        vc += r.variance_clamps;
        ec += r.eigen_clamps;
        beliefs.push(r.belief);
    }
    if vc + ec > 0 {
        log::debug!("rollout clamps: {vc} variance, {ec} eigenvalue");
    }
    Ok(Rollout { beliefs, variance_clamps: vc, eigen_clamps: ec })
}

/// Convenience: lift an `f64` matrix into a scalar type.
pub fn lift_mat<S: Real>(m: &DMatrix<f64>) -> Mat<S> {
    Mat::from_fn(m.nrows(), m.ncols(), |r, c| S::cst(m[(r, c)]))
}
