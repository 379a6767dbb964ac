//! Exact LPV embedding of the moment maps by path-integrated Jacobians.
//!
//! For a smooth map `g` and an anchor `ς̃`,
//! `g(ς) = g(ς̃) + [∫₀¹ ∇g(ς̃ + λ(ς − ς̃)) dλ] (ς − ς̃)`; the integral is
//! evaluated by composite Simpson quadrature along the segment.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{dim_check, Error, Result};
use crate::propagation::{AugmentedModel, NominalModel};
use crate::scalar::{Dual, Real};

/// The mean map ϑ and covariance map ζ of a Gaussian recursion, over
/// `(μ_x, u, Σ_x)`. Implementations symmetrize `Σ_x` before use.
pub trait MomentMaps: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn theta<S: Real>(&self, mu: &[S], u: &[S], sigma: &Mat<S>) -> Result<Vec<S>>;
    /// ϑ and column-major `vec ζ`.
    fn theta_zeta<S: Real>(&self, mu: &[S], u: &[S], sigma: &Mat<S>) -> Result<(Vec<S>, Vec<S>)>;
}

impl<N: NominalModel> MomentMaps for AugmentedModel<N> {
    fn state_dim(&self) -> usize {
        AugmentedModel::state_dim(self)
    }

    fn input_dim(&self) -> usize {
        AugmentedModel::input_dim(self)
    }

    fn theta<S: Real>(&self, mu: &[S], u: &[S], sigma: &Mat<S>) -> Result<Vec<S>> {
        AugmentedModel::theta(self, mu, u, sigma)
    }

    fn theta_zeta<S: Real>(&self, mu: &[S], u: &[S], sigma: &Mat<S>) -> Result<(Vec<S>, Vec<S>)> {
        let (t, z, _) = AugmentedModel::theta_zeta(self, mu, u, sigma)?;
        Ok((t, z.vec_colmajor()))
    }
}

/// `ρ = (μ_x, u, vec Σ_x)`
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulingPoint {
    pub rho: DVector<f64>,
    n_x: usize,
    n_u: usize,
}

impl SchedulingPoint {
    pub fn new(mu: &DVector<f64>, u: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let (nx, nu) = (mu.len(), u.len());
        if sigma.nrows() != nx || sigma.ncols() != nx {
            return Err(Error::Dimension(format!("covariance must be {nx}×{nx}")));
        }
        if (sigma - sigma.transpose()).amax() >= 1e-10 {
            return Err(Error::Argument("scheduled covariance is not symmetric".into()));
        }
        let mut rho = DVector::zeros(nx + nu + nx * nx);
        rho.rows_mut(0, nx).copy_from(mu);
        rho.rows_mut(nx, nu).copy_from(u);
        for c in 0..nx {
            for r in 0..nx {
                rho[nx + nu + c * nx + r] = sigma[(r, c)];
            }
        }
        Ok(SchedulingPoint { rho, n_x: nx, n_u: nu })
    }

    pub fn mu(&self) -> DVector<f64> {
        self.rho.rows(0, self.n_x).into_owned()
    }

    pub fn u(&self) -> DVector<f64> {
        self.rho.rows(self.n_x, self.n_u).into_owned()
    }

    pub fn sigma_vec(&self) -> DVector<f64> {
        self.rho.rows(self.n_x + self.n_u, self.n_x * self.n_x).into_owned()
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n_x, self.n_x, self.sigma_vec().as_slice())
    }

    pub fn state_dim(&self) -> usize {
        self.n_x
    }

    pub fn input_dim(&self) -> usize {
        self.n_u
    }
}

/// The fixed segment start `(x(k), u(k−1), 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPoint {
    pub x_meas: DVector<f64>,
    pub u_prev: DVector<f64>,
}

impl AnchorPoint {
    pub fn new(x_meas: DVector<f64>, u_prev: DVector<f64>) -> Self {
        AnchorPoint { x_meas, u_prev }
    }

    pub fn point(&self) -> SchedulingPoint {
        let n = self.x_meas.len();
        SchedulingPoint::new(&self.x_meas, &self.u_prev, &DMatrix::zeros(n, n)).expect("consistent anchor")
    }
}

/// Which blocks to factorize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorizeLevel {
    /// ϑ blocks for `(μ, u)` and the product `C_θ vec Σ` at the query only.
    Mean,
    /// Every block of ϑ and ζ.
    Full,
}

#[derive(Clone, Debug)]
pub struct ZetaBlocks {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub affine: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct LpvStep {
    pub a_theta: DMatrix<f64>,
    pub b_theta: DMatrix<f64>,
    /// Present for [`FactorizeLevel::Full`].
    pub c_theta: Option<DMatrix<f64>>,
    /// `C_θ vec Σ` at the query covariance.
    pub c_theta_sigma: DVector<f64>,
    pub affine_theta: DVector<f64>,
    pub zeta: Option<ZetaBlocks>,
    pub anchor_x: DVector<f64>,
    pub anchor_u: DVector<f64>,
}

impl LpvStep {
    /// Affine prediction of the next mean. Without `sigma_vec` the
    /// query-covariance term is used.
    pub fn predict_mean(&self, mu: &DVector<f64>, u: &DVector<f64>, sigma_vec: Option<&DVector<f64>>) -> DVector<f64> {
        let cs = match (sigma_vec, &self.c_theta) {
            (Some(s), Some(c)) => c * s,
            _ => self.c_theta_sigma.clone(),
        };
        &self.a_theta * (mu - &self.anchor_x) + &self.b_theta * (u - &self.anchor_u) + cs + &self.affine_theta
    }

    /// Affine prediction of the next `vec Σ` (requires ζ blocks).
    pub fn predict_cov(&self, mu: &DVector<f64>, u: &DVector<f64>, sigma_vec: &DVector<f64>) -> Option<DVector<f64>> {
        let z = self.zeta.as_ref()?;
        Some(&z.a * (mu - &self.anchor_x) + &z.b * (u - &self.anchor_u) + &z.c * sigma_vec + &z.affine)
    }
}

/// Jacobians of ϑ and ζ with respect to `μ_x`, `u` and `vec Σ_x`.
#[derive(Clone, Debug)]
pub struct BlockJacobians {
    pub theta_mu: DMatrix<f64>,
    pub theta_u: DMatrix<f64>,
    pub theta_sigma: DMatrix<f64>,
    pub zeta_mu: DMatrix<f64>,
    pub zeta_u: DMatrix<f64>,
    pub zeta_sigma: DMatrix<f64>,
}

impl BlockJacobians {
    fn zeros(nx: usize, nu: usize) -> Self {
        let nn = nx * nx;
        BlockJacobians {
            theta_mu: DMatrix::zeros(nx, nx),
            theta_u: DMatrix::zeros(nx, nu),
            theta_sigma: DMatrix::zeros(nx, nn),
            zeta_mu: DMatrix::zeros(nn, nx),
            zeta_u: DMatrix::zeros(nn, nu),
            zeta_sigma: DMatrix::zeros(nn, nn),
        }
    }

    fn axpy(&mut self, w: f64, o: &BlockJacobians) {
        self.theta_mu += &o.theta_mu * w;
        self.theta_u += &o.theta_u * w;
        self.theta_sigma += &o.theta_sigma * w;
        self.zeta_mu += &o.zeta_mu * w;
        self.zeta_u += &o.zeta_u * w;
        self.zeta_sigma += &o.zeta_sigma * w;
    }
}

/// Seeds a dual-valued copy of `ρ` with tangent `dir`.
fn seeded(point: &DVector<f64>, dir: &[(usize, f64)], nx: usize, nu: usize) -> (Vec<Dual<f64>>, Vec<Dual<f64>>, Mat<Dual<f64>>) {
    let mut t = vec![0.0; point.len()];
    for &(k, v) in dir {
        t[k] = v;
    }
    let d = |k: usize| Dual::new(point[k], t[k]);
    let mu = (0..nx).map(d).collect();
    let u = (0..nu).map(|k| d(nx + k)).collect();
    let sigma = Mat::from_fn(nx, nx, |r, c| d(nx + nu + c * nx + r));
    (mu, u, sigma)
}

/// Basis directions: `μ`, `u`, then one symmetric direction per `Σ` entry
/// pair `(r, c)`, `r ≤ c`.
fn directions(nx: usize, nu: usize) -> Vec<(Vec<(usize, f64)>, DirKind)> {
    let mut dirs = Vec::new();
    for k in 0..nx + nu {
        dirs.push((vec![(k, 1.0)], DirKind::Coord(k)));
    }
    let off = nx + nu;
    for c in 0..nx {
        for r in 0..=c {
            if r == c {
                dirs.push((vec![(off + c * nx + r, 1.0)], DirKind::Coord(off + c * nx + r)));
            } else {
                dirs.push((
                    vec![(off + c * nx + r, 1.0), (off + r * nx + c, 1.0)],
                    DirKind::SymPair(off + c * nx + r, off + r * nx + c),
                ));
            }
        }
    }
    dirs
}

#[derive(Clone, Copy)]
enum DirKind {
    Coord(usize),
    /// Derivative along `e_a + e_b`; each of the two entries gets half.
    SymPair(usize, usize),
}

fn full_jacobians_at<M: MomentMaps>(maps: &M, point: &DVector<f64>) -> Result<BlockJacobians> {
    let (nx, nu) = (maps.state_dim(), maps.input_dim());
    let mut jac = BlockJacobians::zeros(nx, nu);
    let off = nx + nu;
    for (dir, kind) in directions(nx, nu) {
        let (mu, u, sigma) = seeded(point, &dir, nx, nu);
        let (th, ze) = maps.theta_zeta(&mu, &u, &sigma)?;
        let mut put = |col: usize, scale: f64| {
            for r in 0..nx {
                let v = th[r].du * scale;
                if col < nx {
                    jac.theta_mu[(r, col)] = v;
                } else if col < off {
                    jac.theta_u[(r, col - nx)] = v;
                } else {
                    jac.theta_sigma[(r, col - off)] = v;
                }
            }
            for r in 0..nx * nx {
                let v = ze[r].du * scale;
                if col < nx {
                    jac.zeta_mu[(r, col)] = v;
                } else if col < off {
                    jac.zeta_u[(r, col - nx)] = v;
                } else {
                    jac.zeta_sigma[(r, col - off)] = v;
                }
            }
        };
        match kind {
            DirKind::Coord(k) => put(k, 1.0),
            DirKind::SymPair(a, b) => {
                put(a, 0.5);
                put(b, 0.5);
            }
        }
    }
    Ok(jac)
}

/// Jacobians of both maps at a scheduling point (forward mode).
pub fn jacobians<M: MomentMaps>(maps: &M, point: &SchedulingPoint) -> Result<BlockJacobians> {
    dim_check("scheduling point", maps.state_dim() + maps.input_dim() + maps.state_dim().pow(2), point.rho.len())?;
    full_jacobians_at(maps, &point.rho)
}

/// ϑ-Jacobians for `(μ, u)` and the directional derivative along `sdir`.
fn mean_jacobians_at<M: MomentMaps>(
    maps: &M,
    point: &DVector<f64>,
    sdir: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let (nx, nu) = (maps.state_dim(), maps.input_dim());
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, nu);
    for k in 0..nx + nu {
        let (mu, u, sigma) = seeded(point, &[(k, 1.0)], nx, nu);
        let th = maps.theta(&mu, &u, &sigma)?;
        for r in 0..nx {
            if k < nx {
                a[(r, k)] = th[r].du;
            } else {
                b[(r, k - nx)] = th[r].du;
            }
        }
    }
    let off = nx + nu;
    let dir: Vec<(usize, f64)> = (0..nx * nx).filter(|&i| sdir[i] != 0.0).map(|i| (off + i, sdir[i])).collect();
    let cs = if dir.is_empty() {
        DVector::zeros(nx)
    } else {
        let (mu, u, sigma) = seeded(point, &dir, nx, nu);
        DVector::from_iterator(nx, maps.theta(&mu, &u, &sigma)?.iter().map(|v| v.du))
    };
    Ok((a, b, cs))
}

/// Composite Simpson 1/3 nodes and weights on [0, 1].
pub fn simpson_rule(nodes: usize) -> Result<Vec<(f64, f64)>> {
    if nodes < 3 || nodes % 2 == 0 {
        return Err(Error::Argument(format!("Simpson rule needs an odd node count ≥ 3, got {nodes}")));
    }
    let h = 1.0 / (nodes - 1) as f64;
    Ok((0..nodes)
        .map(|k| {
            let w = if k == 0 || k == nodes - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (k as f64 * h, w * h / 3.0)
        })
        .collect())
}

fn node_error(lambda: f64, e: Error) -> Error {
    Error::Numerical(format!("Jacobian evaluation failed at λ = {lambda}: {e}"))
}

/// Factorizes ϑ (and ζ for [`FactorizeLevel::Full`]) on the segment from the
/// anchor to `query`.
pub fn ftc_factorize<M: MomentMaps>(
    maps: &M,
    anchor: &AnchorPoint,
    query: &SchedulingPoint,
    quad_nodes: usize,
    level: FactorizeLevel,
) -> Result<LpvStep> {
    let (nx, nu) = (maps.state_dim(), maps.input_dim());
    dim_check("anchor state", nx, anchor.x_meas.len())?;
    dim_check("anchor input", nu, anchor.u_prev.len())?;
    dim_check("scheduling point", nx + nu + nx * nx, query.rho.len())?;
    let rule = simpson_rule(quad_nodes)?;
    let start = anchor.point().rho;
    let delta = &query.rho - &start;
    let sdir = query.sigma_vec();
    let degenerate = delta.iter().all(|&v| v == 0.0);
    let nodes: Vec<(f64, f64)> = if degenerate { vec![(0.0, 1.0)] } else { rule };

    let mu0: Vec<f64> = anchor.x_meas.iter().copied().collect();
    let u0: Vec<f64> = anchor.u_prev.iter().copied().collect();
    let zero = Mat::zeros(nx, nx);

    match level {
        FactorizeLevel::Mean => {
            let mut a = DMatrix::zeros(nx, nx);
            let mut b = DMatrix::zeros(nx, nu);
            let mut cs = DVector::zeros(nx);
            for &(lambda, w) in &nodes {
                let p = &start + &delta * lambda;
                let (ai, bi, ci) = mean_jacobians_at(maps, &p, &sdir).map_err(|e| node_error(lambda, e))?;
                a += ai * w;
                b += bi * w;
                cs += ci * w;
            }
            let affine = DVector::from_vec(maps.theta(&mu0, &u0, &zero)?);
            Ok(LpvStep {
                a_theta: a,
                b_theta: b,
                c_theta: None,
                c_theta_sigma: cs,
                affine_theta: affine,
                zeta: None,
                anchor_x: anchor.x_meas.clone(),
                anchor_u: anchor.u_prev.clone(),
            })
        }
        FactorizeLevel::Full => {
            let mut acc = BlockJacobians::zeros(nx, nu);
            for &(lambda, w) in &nodes {
                let p = &start + &delta * lambda;
                let j = full_jacobians_at(maps, &p).map_err(|e| node_error(lambda, e))?;
                acc.axpy(w, &j);
            }
            let (th, ze) = maps.theta_zeta(&mu0, &u0, &zero)?;
            let c_theta_sigma = &acc.theta_sigma * &sdir;
            Ok(LpvStep {
                a_theta: acc.theta_mu,
                b_theta: acc.theta_u,
                c_theta: Some(acc.theta_sigma),
                c_theta_sigma,
                affine_theta: DVector::from_vec(th),
                zeta: Some(ZetaBlocks { a: acc.zeta_mu, b: acc.zeta_u, c: acc.zeta_sigma, affine: DVector::from_vec(ze) }),
                anchor_x: anchor.x_meas.clone(),
                anchor_u: anchor.u_prev.clone(),
            })
        }
    }
}

/// One factorization per prediction step, all sharing the anchor. Steps are
/// factorized in parallel.
pub fn factorize_horizon<M: MomentMaps>(
    maps: &M,
    anchor: &AnchorPoint,
    schedule: &[SchedulingPoint],
    quad_nodes: usize,
    level: FactorizeLevel,
) -> Result<Vec<LpvStep>> {
    schedule
        .par_iter()
        .map(|q| ftc_factorize(maps, anchor, q, quad_nodes, level))
        .collect()
}

/// Rolls the LPV model forward from `x0` (zero covariance) with the given
/// inputs. Returns means and, when ζ blocks are present, `vec Σ`.
pub fn lpv_rollout(steps: &[LpvStep], x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    dim_check("inputs", steps.len(), inputs.len())?;
    let nx = x0.len();
    let mut mus = vec![x0.clone()];
    let mut sigmas = vec![DVector::zeros(nx * nx)];
    for (step, u) in steps.iter().zip(inputs) {
        let mu = mus.last().unwrap();
        let s = sigmas.last().unwrap();
        let next_mu = step.predict_mean(mu, u, Some(s));
        let next_s = step.predict_cov(mu, u, s).unwrap_or_else(|| DVector::zeros(nx * nx));
        mus.push(next_mu);
        sigmas.push(next_s);
    }
    Ok((mus, sigmas))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_weights_sum_to_one_and_integrate_cubics() {
        for n in [3, 5, 9, 17] {
            let r = simpson_rule(n).unwrap();
            let s: f64 = r.iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-15);
            let cubic: f64 = r.iter().map(|(x, w)| w * x * x * x).sum();
            assert!((cubic - 0.25).abs() < 1e-15);
        }
        assert!(simpson_rule(4).is_err());
        assert!(simpson_rule(1).is_err());
    }
}
