//! Variational free energy (VFE) sparse GP with per-output inducing inputs.
//!
//! All training-time quantities are evaluated through M×M factorizations:
//! with `Kuu = Luu Luuᵀ`, `A = Luu⁻¹ Kuf / σ_v` and `B = I + A Aᵀ`, one has
//! `S = Kuu + σ_v⁻² Kuf Kfu = Luu B Luuᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::gp::{chol_logdet, cholesky_jittered, kernel_matrix, se_eval, Dataset, Hyperparams};
use crate::optim::{self, LbfgsOptions, OptReport};

/// Sparse posterior of one output.
#[derive(Clone, Debug)]
pub struct SparseOutput {
    pub hyperparams: Hyperparams,
    /// M × n_w
    pub inducing_inputs: DMatrix<f64>,
    pub dual_weights: DVector<f64>,
    pub kuu_inv: DMatrix<f64>,
    pub s_inv: DMatrix<f64>,
    /// `kuu_inv − s_inv`, the variance-reduction weights.
    pub var_weights: DMatrix<f64>,
    /// Inducing inputs as row vectors, cached for kernel evaluation.
    rows: Vec<Vec<f64>>,
}

impl SparseOutput {
    pub fn from_parts(
        hyperparams: Hyperparams,
        inducing_inputs: DMatrix<f64>,
        dual_weights: DVector<f64>,
        kuu_inv: DMatrix<f64>,
        s_inv: DMatrix<f64>,
    ) -> Result<Self> {
        hyperparams.validate()?;
        let m = inducing_inputs.nrows();
        if m == 0 {
            return Err(Error::Argument("at least one inducing input is required".into()));
        }
        dim_check("inducing input dimension", hyperparams.input_dim(), inducing_inputs.ncols())?;
        dim_check("dual weights", m, dual_weights.len())?;
        for (name, mat) in [("kuu_inv", &kuu_inv), ("s_inv", &s_inv)] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::Dimension(format!("{name} must be {m}×{m}")));
            }
        }
        let var_weights = {
            let d = &kuu_inv - &s_inv;
            (&d + d.transpose()) * 0.5
        };
        let rows = (0..m).map(|i| inducing_inputs.row(i).iter().copied().collect()).collect();
        Ok(SparseOutput { hyperparams, inducing_inputs, dual_weights, kuu_inv, s_inv, var_weights, rows })
    }

    pub fn num_inducing(&self) -> usize {
        self.rows.len()
    }

    pub fn inducing_row(&self, tau: usize) -> &[f64] {
        &self.rows[tau]
    }

    pub fn kernel_vector(&self, w: &[f64]) -> DVector<f64> {
        let h = &self.hyperparams;
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| se_eval(h.signal_variance, &h.lengthscales, w, r)),
        )
    }

    /// Predictive mean and variance (observation noise included).
    pub fn predict(&self, w: &[f64]) -> (f64, f64) {
        let k = self.kernel_vector(w);
        let h = &self.hyperparams;
        let mean = k.dot(&self.dual_weights);
        let var = h.signal_variance + h.noise_variance - k.dot(&(&self.var_weights * &k));
        (mean, var.max(f64::MIN_POSITIVE))
    }
}

#[derive(Clone, Debug)]
pub struct SparseGpModel {
    pub outputs: Vec<SparseOutput>,
}

impl SparseGpModel {
    pub fn input_dim(&self) -> usize {
        self.outputs[0].hyperparams.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    /// Builds the posterior for given hyperparameters and inducing inputs
    /// (one M × n_w matrix per output).
    pub fn build(data: &Dataset, hyperparams: &[Hyperparams], inducing: &[DMatrix<f64>]) -> Result<Self> {
        dim_check("hyperparameter sets", data.output_dim(), hyperparams.len())?;
        dim_check("inducing sets", data.output_dim(), inducing.len())?;
        let mut outputs = Vec::with_capacity(hyperparams.len());
        for i in 0..hyperparams.len() {
            let h = &hyperparams[i];
            h.validate()?;
            dim_check("lengthscales", data.input_dim(), h.input_dim())?;
            dim_check("inducing input dimension", data.input_dim(), inducing[i].ncols())?;
            if inducing[i].nrows() > data.len() {
                return Err(Error::Argument(format!(
                    "{} inducing inputs exceed the {} training rows",
                    inducing[i].nrows(),
                    data.len()
                )));
            }
            let f = Factors::new(data, h, &inducing[i], &data.output(i))?;
            let luu_inv = f.luu.clone().try_inverse().ok_or_else(|| Error::Numerical("singular Kuu factor".into()))?;
            let kuu_inv = luu_inv.transpose() * &luu_inv;
            let lb_inv = f.lb.clone().try_inverse().ok_or_else(|| Error::Numerical("singular B factor".into()))?;
            let t = lb_inv * &luu_inv;
            let s_inv = t.transpose() * &t;
            // ᾰ = σ_v⁻¹ Luu⁻ᵀ LB⁻ᵀ c with c = LB⁻¹ A y.
            let v = f.lb.transpose().solve_upper_triangular(&f.c).expect("non-singular");
            let dual = f.luu.transpose().solve_upper_triangular(&v).expect("non-singular") / h.noise_variance.sqrt();
            outputs.push(SparseOutput::from_parts(
                h.clone(),
                inducing[i].clone(),
                dual,
                symmetrize(kuu_inv),
                symmetrize(s_inv),
            )?);
        }
        Ok(SparseGpModel { outputs })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: DOC_FORMAT.into(),
            version: DOC_VERSION,
            outputs: self
                .outputs
                .iter()
                .map(|o| OutputDocument {
                    hyperparams: o.hyperparams.clone(),
                    inducing_inputs: rows_of(&o.inducing_inputs),
                    dual_weights: o.dual_weights.iter().copied().collect(),
                    kuu_inv: rows_of(&o.kuu_inv),
                    s_inv: rows_of(&o.s_inv),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Document(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        if doc.format != DOC_FORMAT {
            return Err(Error::Document(format!("unexpected format tag {:?}", doc.format)));
        }
        if doc.version != DOC_VERSION {
            return Err(Error::Document(format!("unsupported version {} (expected {DOC_VERSION})", doc.version)));
        }
        if doc.outputs.is_empty() {
            return Err(Error::Document("model has no outputs".into()));
        }
        let outputs = doc
            .outputs
            .into_iter()
            .map(|o| {
                SparseOutput::from_parts(
                    o.hyperparams,
                    matrix_of(&o.inducing_inputs)?,
                    DVector::from_vec(o.dual_weights),
                    matrix_of(&o.kuu_inv)?,
                    matrix_of(&o.s_inv)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let n_w = outputs[0].hyperparams.input_dim();
        if outputs.iter().any(|o| o.hyperparams.input_dim() != n_w) {
            return Err(Error::Document("outputs disagree on the input dimension".into()));
        }
        Ok(SparseGpModel { outputs })
    }
}

pub fn sparse_predict(m: &SparseGpModel, w_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
    dim_check("query point", m.input_dim(), w_star.len())?;
    let mut mean = DVector::zeros(m.output_dim());
    let mut var = DVector::zeros(m.output_dim());
    for (i, o) in m.outputs.iter().enumerate() {
        (mean[i], var[i]) = o.predict(w_star);
    }
    Ok((mean, var))
}

const DOC_FORMAT: &str = "gpmpc-sparse-gp";
const DOC_VERSION: u32 = 1;

/// On-disk layout of a trained model. Matrices are stored as lists of rows.
#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    outputs: Vec<OutputDocument>,
}

#[derive(Serialize, Deserialize)]
struct OutputDocument {
    hyperparams: Hyperparams,
    inducing_inputs: Vec<Vec<f64>>,
    dual_weights: Vec<f64>,
    kuu_inv: Vec<Vec<f64>>,
    s_inv: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Document("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Shared M×M factorizations of the bound.
struct Factors {
    kuu: DMatrix<f64>,
    kuf: DMatrix<f64>,
    luu: DMatrix<f64>,
    /// `Luu⁻¹ Kuf / σ_v`
    a: DMatrix<f64>,
    lb: DMatrix<f64>,
    /// `LB⁻¹ A y`
    c: DVector<f64>,
}

impl Factors {
    fn new(data: &Dataset, h: &Hyperparams, inducing: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let kuu_raw = kernel_matrix(h, inducing, inducing);
        let (luu, jitter) = cholesky_jittered(&kuu_raw, "inducing kernel matrix")?;
        let mut kuu = kuu_raw;
        if jitter > 0.0 {
            let add = jitter * kuu.trace() / kuu.nrows() as f64;
            for i in 0..kuu.nrows() {
                kuu[(i, i)] += add;
            }
        }
        let kuf = kernel_matrix(h, inducing, &data.inputs);
        let a = luu.solve_lower_triangular(&kuf).expect("non-singular") / h.noise_variance.sqrt();
        let m = a.nrows();
        let b = DMatrix::identity(m, m) + &a * a.transpose();
        let lb = b.cholesky().ok_or_else(|| Error::Numerical("I + AAᵀ not positive definite".into()))?.l();
        let c = lb.solve_lower_triangular(&(&a * y)).expect("non-singular");
        Ok(Factors { kuu, kuf, luu, a, lb, c })
    }

    fn objective(&self, h: &Hyperparams, y: &DVector<f64>) -> f64 {
        let n = y.len() as f64;
        let s = h.noise_variance;
        0.5 * (chol_logdet(&self.lb) + n * s.ln() + y.norm_squared() / s - self.c.norm_squared() / s
            + n * h.signal_variance / s
            - self.a.norm_squared())
    }
}

/// Negative VFE bound (without the `N/2·log 2π` constant) for one output.
pub fn vfe_objective(data: &Dataset, h: &Hyperparams, inducing: &DMatrix<f64>, output: usize) -> Result<f64> {
    h.validate()?;
    dim_check("lengthscales", data.input_dim(), h.input_dim())?;
    dim_check("inducing input dimension", data.input_dim(), inducing.ncols())?;
    let y = data.output(output);
    Ok(Factors::new(data, h, inducing, &y)?.objective(h, &y))
}

/// Objective, gradient with respect to `Hyperparams::to_log`, and gradient
/// with respect to the inducing inputs (M × n_w).
pub fn vfe_objective_grad(
    data: &Dataset,
    h: &Hyperparams,
    inducing: &DMatrix<f64>,
    output: usize,
) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    h.validate()?;
    dim_check("lengthscales", data.input_dim(), h.input_dim())?;
    dim_check("inducing input dimension", data.input_dim(), inducing.ncols())?;
    let y = data.output(output);
    let f = Factors::new(data, h, inducing, &y)?;
    let value = f.objective(h, &y);

    let n = data.len();
    let m = inducing.nrows();
    let s = h.noise_variance;
    let sf2 = h.signal_variance;

    let luu_inv = f.luu.clone().try_inverse().expect("non-singular");
    let kuu_inv = luu_inv.transpose() * &luu_inv;
    let lb_inv = f.lb.clone().try_inverse().expect("non-singular");
    let t = lb_inv * &luu_inv;
    let s_inv = t.transpose() * &t;
    let p = &f.kuf * f.kuf.transpose();
    let b = &f.kuf * &y;
    let mv = &s_inv * &b;

    let kp = &kuu_inv * &p * &kuu_inv;
    let g_uu = (&s_inv - &kuu_inv + (&mv * mv.transpose()) / (s * s) + kp / s) * 0.5;
    let g_uf = (&s_inv * &f.kuf) / s - (&mv * y.transpose()) / (s * s) + (&mv * (mv.transpose() * &f.kuf)) / (s * s * s)
        - (&kuu_inv * &f.kuf) / s;

    let tr_sp = s_inv.component_mul(&p).sum();
    let tr_kp = kuu_inv.component_mul(&p).sum();
    let nf = n as f64;
    let df_ds = 0.5
        * (-tr_sp / (s * s) + nf / s - y.norm_squared() / (s * s) + 2.0 * b.dot(&mv) / (s * s * s)
            - mv.dot(&(&p * &mv)) / (s * s * s * s)
            - nf * sf2 / (s * s)
            + tr_kp / (s * s));

    let mut grad = vec![0.0; 2 + h.input_dim()];
    grad[0] = g_uu.component_mul(&f.kuu).sum() + g_uf.component_mul(&f.kuf).sum() + 0.5 * nf * sf2 / s;
    grad[1] = s * df_ds;
    let mut grad_u = DMatrix::zeros(m, h.input_dim());
    for d in 0..h.input_dim() {
        let lam = h.lengthscales[d];
        let mut acc = 0.0;
        for a in 0..m {
            let ua = inducing[(a, d)];
            let mut gu = 0.0;
            for bb in 0..m {
                let diff = ua - inducing[(bb, d)];
                let k = f.kuu[(a, bb)];
                acc += g_uu[(a, bb)] * k * 0.5 * diff * diff / lam;
                gu -= 2.0 * g_uu[(a, bb)] * k * diff / lam;
            }
            for j in 0..n {
                let diff = ua - data.inputs[(j, d)];
                let k = f.kuf[(a, j)];
                acc += g_uf[(a, j)] * k * 0.5 * diff * diff / lam;
                gu -= g_uf[(a, j)] * k * diff / lam;
            }
            grad_u[(a, d)] = gu;
        }
        grad[2 + d] = acc;
    }
    Ok((value, grad, grad_u))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseTrainOptions {
    pub lbfgs: LbfgsOptions,
    pub optimize_inducing: bool,
    /// One inducing set shared by all outputs instead of one per output.
    pub shared_inducing: bool,
    pub seed: u64,
    /// Inducing inputs stay inside the training-input bounding box scaled by this factor.
    pub box_scale: f64,
    pub log_bounds: (f64, f64),
    pub kmeans_iters: usize,
    /// Independent starts per fit; the lowest bound wins.
    pub restarts: usize,
}

impl Default for SparseTrainOptions {
    fn default() -> Self {
        SparseTrainOptions {
            lbfgs: LbfgsOptions { max_iters: 400, ..LbfgsOptions::default() },
            optimize_inducing: true,
            shared_inducing: false,
            seed: 0,
            box_scale: 1.2,
            log_bounds: (-18.0, 12.0),
            kmeans_iters: 20,
            restarts: 4,
        }
    }
}

/// k-means++ seeding followed by Lloyd iterations. Deterministic for a seed.
pub fn kmeans_centers(inputs: &DMatrix<f64>, k: usize, seed: u64, iters: usize) -> DMatrix<f64> {
    let n = inputs.nrows();
    let dim = inputs.ncols();
    let pts: Vec<Vec<f64>> = (0..n).map(|i| inputs.row(i).iter().copied().collect()).collect();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![pts[rng.random_range(0..n)].clone()];
    let mut best: Vec<f64> = pts.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let idx = if total <= 0.0 {
            // All remaining points coincide with a center; take any unused row.
            (0..n).find(|&i| !centers.iter().any(|c| c == &pts[i])).unwrap_or(centers.len() % n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in best.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        centers.push(pts[idx].clone());
        for (b, p) in best.iter_mut().zip(&pts) {
            *b = b.min(dist2(p, &centers[centers.len() - 1]));
        }
    }
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in &pts {
            let (ci, _) = centers
                .iter()
                .enumerate()
                .map(|(i, c)| (i, dist2(p, c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            counts[ci] += 1;
            for d in 0..dim {
                sums[ci][d] += p[d];
            }
        }
        let mut moved = false;
        for c in 0..k {
            if counts[c] > 0 {
                let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                moved |= new != centers[c];
                centers[c] = new;
            }
        }
        if !moved {
            break;
        }
    }
    DMatrix::from_fn(k, dim, |i, j| centers[i][j])
}

/// Maps unconstrained parameters to inducing inputs inside a box.
struct BoxMap {
    center: Vec<f64>,
    half: Vec<f64>,
}

impl BoxMap {
    fn new(inputs: &DMatrix<f64>, scale: f64) -> Self {
        let mut center = Vec::new();
        let mut half = Vec::new();
        for d in 0..inputs.ncols() {
            let col = inputs.column(d);
            let (lo, hi) = (col.min(), col.max());
            center.push(0.5 * (lo + hi));
            let h = 0.5 * (hi - lo) * scale;
            half.push(if h > 0.0 { h } else { 1.0 });
        }
        BoxMap { center, half }
    }

    fn to_free(&self, u: &DMatrix<f64>) -> Vec<f64> {
        let mut v = Vec::with_capacity(u.len());
        for a in 0..u.nrows() {
            for d in 0..u.ncols() {
                let r = ((u[(a, d)] - self.center[d]) / self.half[d]).clamp(-0.999_999, 0.999_999);
                v.push(r.atanh());
            }
        }
        v
    }

    fn from_free(&self, v: &[f64], m: usize) -> DMatrix<f64> {
        let dim = self.center.len();
        DMatrix::from_fn(m, dim, |a, d| self.center[d] + self.half[d] * v[a * dim + d].tanh())
    }

    /// Chain rule: gradient in free coordinates.
    fn pull_back(&self, v: &[f64], grad_u: &DMatrix<f64>) -> Vec<f64> {
        let dim = self.center.len();
        let mut g = Vec::with_capacity(v.len());
        for a in 0..grad_u.nrows() {
            for d in 0..dim {
                let t = v[a * dim + d].tanh();
                g.push(grad_u[(a, d)] * self.half[d] * (1.0 - t * t));
            }
        }
        g
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseTrainReport {
    pub optimizer: Vec<OptReport>,
    /// Final objective per output.
    pub objectives: Vec<f64>,
}

/// Multiplier on the initial lengthscales for restart `r`.
/// Longer scales, since short ones tend to collapse to a noise-only fit.
fn restart_lengthscale_factor(r: usize) -> f64 {
    10f64.powf(0.5 * r as f64)
}

/// Jointly fits hyperparameters and inducing inputs by minimizing the
/// negative VFE bound, then builds the posterior. With `restarts > 1` each
/// output is refit from differently seeded inducing sets and lengthscales
/// and the lowest bound is kept.
pub fn train_sparse(
    data: &Dataset,
    m: usize,
    init: &[Hyperparams],
    opts: &SparseTrainOptions,
) -> Result<(SparseGpModel, SparseTrainReport)> {
    dim_check("initial hyperparameter sets", data.output_dim(), init.len())?;
    if m == 0 || m > data.len() {
        return Err(Error::Argument(format!("need 1 ≤ M ≤ N, got M={m}, N={}", data.len())));
    }
    for h in init {
        h.validate()?;
        dim_check("lengthscales", data.input_dim(), h.input_dim())?;
    }
    let nz = init.len();
    let np = 2 + data.input_dim();
    let (lo, hi) = opts.log_bounds;
    let bmap = BoxMap::new(&data.inputs, opts.box_scale);
    let in_bounds = |x: &[f64]| x.iter().all(|v| (lo..=hi).contains(v));
    let initial_log = |h: &Hyperparams, r: usize| -> Vec<f64> {
        let mut v = h.to_log();
        let shift = restart_lengthscale_factor(r).ln();
        for l in v[2..].iter_mut() {
            *l += shift;
        }
        v.into_iter().map(|x| x.clamp(lo, hi)).collect()
    };
    let better = |a: &OptReport, b: &OptReport| a.f_final < b.f_final;

    let mut hyper = Vec::with_capacity(nz);
    let mut inducing = Vec::with_capacity(nz);
    let mut reports = Vec::new();

    if opts.shared_inducing {
        let mut best: Option<(Vec<f64>, OptReport, DMatrix<f64>)> = None;
        for r in 0..opts.restarts.max(1) {
            let start = kmeans_centers(&data.inputs, m, opts.seed.wrapping_add(r as u64), opts.kmeans_iters);
            let mut x0: Vec<f64> = init.iter().flat_map(|h| initial_log(h, r)).collect();
            if opts.optimize_inducing {
                x0.extend(bmap.to_free(&start));
            }
            let objective = |x: &[f64]| {
                if !in_bounds(&x[..nz * np]) {
                    return None;
                }
                let u = if opts.optimize_inducing { bmap.from_free(&x[nz * np..], m) } else { start.clone() };
                let mut total = 0.0;
                let mut g = vec![0.0; x.len()];
                let mut gu = DMatrix::zeros(m, data.input_dim());
                for i in 0..nz {
                    let (f, gh, gui) = vfe_objective_grad(data, &Hyperparams::from_log(&x[i * np..(i + 1) * np]), &u, i).ok()?;
                    total += f;
                    g[i * np..(i + 1) * np].copy_from_slice(&gh);
                    gu += gui;
                }
                if opts.optimize_inducing {
                    let pulled = bmap.pull_back(&x[nz * np..], &gu);
                    g[nz * np..].copy_from_slice(&pulled);
                }
                Some((total, g))
            };
            let (x, rep) = optim::minimize(objective, &x0, &opts.lbfgs);
            log::debug!("shared fit, restart {r}: bound {:.6} ({})", rep.f_final, rep.message);
            if best.as_ref().is_none_or(|(_, b, _)| better(&rep, b)) {
                best = Some((x, rep, start));
            }
        }
        let (x, rep, start) = best.expect("at least one restart");
        let u = if opts.optimize_inducing { bmap.from_free(&x[nz * np..], m) } else { start };
        for i in 0..nz {
            hyper.push(Hyperparams::from_log(&x[i * np..(i + 1) * np]));
            inducing.push(u.clone());
        }
        reports.push(rep);
    } else {
        for i in 0..nz {
            let mut best: Option<(Vec<f64>, OptReport, DMatrix<f64>)> = None;
            for r in 0..opts.restarts.max(1) {
                let start = kmeans_centers(&data.inputs, m, opts.seed.wrapping_add(r as u64), opts.kmeans_iters);
                let mut x0 = initial_log(&init[i], r);
                if opts.optimize_inducing {
                    x0.extend(bmap.to_free(&start));
                }
                let objective = |x: &[f64]| {
                    if !in_bounds(&x[..np]) {
                        return None;
                    }
                    let u = if opts.optimize_inducing { bmap.from_free(&x[np..], m) } else { start.clone() };
                    let (f, gh, gu) = vfe_objective_grad(data, &Hyperparams::from_log(&x[..np]), &u, i).ok()?;
                    let mut g = gh;
                    if opts.optimize_inducing {
                        g.extend(bmap.pull_back(&x[np..], &gu));
                    }
                    Some((f, g))
                };
                let (x, rep) = optim::minimize(objective, &x0, &opts.lbfgs);
                log::debug!("output {i}, restart {r}: bound {:.6} ({})", rep.f_final, rep.message);
                if best.as_ref().is_none_or(|(_, b, _)| better(&rep, b)) {
                    best = Some((x, rep, start));
                }
            }
            let (x, rep, start) = best.expect("at least one restart");
            log::info!(
                "output {i}: bound {:.6} -> {:.6} in {} iterations ({})",
                rep.f_initial,
                rep.f_final,
                rep.iterations,
                rep.message
            );
            hyper.push(Hyperparams::from_log(&x[..np]));
            inducing.push(if opts.optimize_inducing { bmap.from_free(&x[np..], m) } else { start });
            reports.push(rep);
        }
    }

    let model = SparseGpModel::build(data, &hyper, &inducing)?;
    let objectives = (0..nz)
        .map(|i| vfe_objective(data, &hyper[i], &inducing[i], i))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, SparseTrainReport { optimizer: reports, objectives }))
}
