//! Exact GP regression with squared-exponential kernels, one independent
//! scalar GP per output column.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::optim::{self, LbfgsOptions, OptReport};

/// SE kernel hyperparameters for one output. `lengthscales` holds the diagonal
/// of Λ directly, i.e. squared length units.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Hyperparams {
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl Hyperparams {
    pub fn new(signal_variance: f64, noise_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let h = Hyperparams { signal_variance, noise_variance, lengthscales };
        h.validate()?;
        Ok(h)
    }

    pub fn isotropic(signal_variance: f64, noise_variance: f64, lengthscale: f64, n_w: usize) -> Self {
        Hyperparams { signal_variance, noise_variance, lengthscales: vec![lengthscale; n_w] }
    }

    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) || !ok(self.noise_variance) {
            return Err(Error::Argument(format!(
                "variances must be positive and finite (signal {}, noise {})",
                self.signal_variance, self.noise_variance
            )));
        }
        if self.lengthscales.is_empty() || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(Error::Argument("lengthscales must be non-empty, positive and finite".into()));
        }
        Ok(())
    }

    /// `[ln σ², ln σ_v², ln λ_1, …]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = vec![self.signal_variance.ln(), self.noise_variance.ln()];
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v
    }

    pub fn from_log(v: &[f64]) -> Self {
        Hyperparams {
            signal_variance: v[0].exp(),
            noise_variance: v[1].exp(),
            lengthscales: v[2..].iter().map(|x| x.exp()).collect(),
        }
    }

    /// Data-driven starting point: output variance, a tenth of it as noise,
    /// and per-dimension input variances as lengthscales.
    pub fn heuristic(data: &Dataset, output: usize) -> Self {
        let var = |col: Vec<f64>| {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        };
        let zv = var(data.outputs.column(output).iter().copied().collect()).max(1e-6);
        let lengthscales = (0..data.input_dim())
            .map(|d| var(data.inputs.column(d).iter().copied().collect()).max(1e-6))
            .collect();
        Hyperparams { signal_variance: zv, noise_variance: 0.1 * zv, lengthscales }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Dataset {
    /// N × n_w
    pub inputs: DMatrix<f64>,
    /// N × n_z
    pub outputs: DMatrix<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Argument("dataset must contain at least one row".into()));
        }
        dim_check("dataset output rows", inputs.nrows(), outputs.nrows())?;
        if !inputs.iter().chain(outputs.iter()).all(|v| v.is_finite()) {
            return Err(Error::Argument("dataset contains non-finite entries".into()));
        }
        Ok(Dataset { inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn input(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).iter().copied().collect()
    }

    pub fn output(&self, col: usize) -> DVector<f64> {
        self.outputs.column(col).into_owned()
    }

    /// Keeps the rows listed in `idx`.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx.iter()),
            outputs: self.outputs.select_rows(idx.iter()),
        }
    }
}

/// Noise-free SE kernel without argument checks.
#[inline]
pub(crate) fn se_eval(signal_variance: f64, lengthscales: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut m = 0.0;
    for d in 0..a.len() {
        let diff = a[d] - b[d];
        m += diff * diff / lengthscales[d];
    }
    signal_variance * (-0.5 * m).exp()
}

pub fn se_kernel(h: &Hyperparams, w: &[f64], w2: &[f64], include_noise: bool) -> Result<f64> {
    h.validate()?;
    dim_check("kernel first argument", h.input_dim(), w.len())?;
    dim_check("kernel second argument", h.input_dim(), w2.len())?;
    if !w.iter().chain(w2).all(|v| v.is_finite()) {
        return Err(Error::Argument("kernel arguments must be finite".into()));
    }
    let mut k = se_eval(h.signal_variance, &h.lengthscales, w, w2);
    if include_noise && w.iter().zip(w2).all(|(a, b)| a.to_bits() == b.to_bits()) {
        k += h.noise_variance;
    }
    Ok(k)
}

/// Noise-free cross-covariance between the rows of `a` and `b`.
pub fn kernel_matrix(h: &Hyperparams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let ra: Vec<Vec<f64>> = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
    let rb: Vec<Vec<f64>> = (0..b.nrows()).map(|i| b.row(i).iter().copied().collect()).collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| se_eval(h.signal_variance, &h.lengthscales, &ra[i], &rb[j]))
}

/// Gram matrix of the training inputs with observation noise on the diagonal.
pub fn gram(h: &Hyperparams, inputs: &DMatrix<f64>) -> DMatrix<f64> {
    let mut k = kernel_matrix(h, inputs, inputs);
    for i in 0..k.nrows() {
        k[(i, i)] += h.noise_variance;
    }
    k
}

pub(crate) const JITTER_START: f64 = 1e-10;
pub(crate) const JITTER_MAX: f64 = 1e-6;

/// Cholesky with diagonal jitter escalation. Jitter is relative to the mean
/// diagonal. Returns the lower factor and the jitter that was needed.
pub(crate) fn cholesky_jittered(k: &DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, f64)> {
    if let Some(c) = k.clone().cholesky() {
        return Ok((c.l(), 0.0));
    }
    let scale = (k.trace() / k.nrows() as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = JITTER_START;
    loop {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter * scale;
        }
        if let Some(c) = kj.cholesky() {
            log::debug!("{context}: cholesky needed jitter {jitter:e}");
            return Ok((c.l(), jitter));
        }
        if jitter >= JITTER_MAX * (1.0 - 1e-9) {
            return Err(Error::Cholesky { context: context.to_string(), jitter });
        }
        jitter *= 10.0;
    }
}

pub(crate) fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = l.solve_lower_triangular(b).expect("non-singular factor");
    l.transpose().solve_upper_triangular(&y).expect("non-singular factor")
}

pub(crate) fn chol_solve_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l.solve_lower_triangular(b).expect("non-singular factor");
    l.transpose().solve_upper_triangular(&y).expect("non-singular factor")
}

pub(crate) fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FullGpModel {
    pub hyperparams: Vec<Hyperparams>,
    pub dataset: Dataset,
    pub alpha: Vec<DVector<f64>>,
    pub chol_gram: Vec<DMatrix<f64>>,
}

pub fn gp_fit(data: &Dataset, h: &[Hyperparams]) -> Result<FullGpModel> {
    dim_check("hyperparameter sets", data.output_dim(), h.len())?;
    let mut alpha = Vec::with_capacity(h.len());
    let mut chol_gram = Vec::with_capacity(h.len());
    for (i, hi) in h.iter().enumerate() {
        hi.validate()?;
        dim_check("lengthscales", data.input_dim(), hi.input_dim())?;
        let (l, _) = cholesky_jittered(&gram(hi, &data.inputs), &format!("gram matrix of output {i}"))?;
        alpha.push(chol_solve(&l, &data.output(i)));
        chol_gram.push(l);
    }
    Ok(FullGpModel { hyperparams: h.to_vec(), dataset: data.clone(), alpha, chol_gram })
}

pub fn gp_predict(m: &FullGpModel, w_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
    dim_check("query point", m.dataset.input_dim(), w_star.len())?;
    let nz = m.hyperparams.len();
    let n = m.dataset.len();
    let mut mean = DVector::zeros(nz);
    let mut var = DVector::zeros(nz);
    for i in 0..nz {
        let h = &m.hyperparams[i];
        let k = DVector::from_fn(n, |j, _| {
            se_eval(h.signal_variance, &h.lengthscales, w_star, &m.dataset.input(j))
        });
        mean[i] = k.dot(&m.alpha[i]);
        let v = m.chol_gram[i].solve_lower_triangular(&k).expect("non-singular factor");
        let prior = h.signal_variance + h.noise_variance;
        var[i] = (prior - v.norm_squared()).clamp(f64::MIN_POSITIVE, prior);
    }
    Ok((mean, var))
}

/// Negative log marginal likelihood without the `N/2·log 2π` constant.
pub fn nlml(data: &Dataset, h: &Hyperparams, output: usize) -> Result<f64> {
    h.validate()?;
    dim_check("lengthscales", data.input_dim(), h.input_dim())?;
    let (l, _) = cholesky_jittered(&gram(h, &data.inputs), "gram matrix")?;
    let z = data.output(output);
    let alpha = chol_solve(&l, &z);
    Ok(0.5 * z.dot(&alpha) + 0.5 * chol_logdet(&l))
}

/// NLML and its gradient with respect to `Hyperparams::to_log`.
pub fn nlml_with_grad(data: &Dataset, h: &Hyperparams, output: usize) -> Result<(f64, Vec<f64>)> {
    h.validate()?;
    dim_check("lengthscales", data.input_dim(), h.input_dim())?;
    let n = data.len();
    let kf = kernel_matrix(h, &data.inputs, &data.inputs);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += h.noise_variance;
    }
    let (l, _) = cholesky_jittered(&k, "gram matrix")?;
    let z = data.output(output);
    let alpha = chol_solve(&l, &z);
    let value = 0.5 * z.dot(&alpha) + 0.5 * chol_logdet(&l);

    // W = K⁻¹ − ααᵀ; dF/dθ = ½ Tr(W ∂K/∂θ) = ½ Σ_ij W_ij ∂K_ij.
    let kinv = chol_solve_mat(&l, &DMatrix::identity(n, n));
    let w = kinv - &alpha * alpha.transpose();
    let mut grad = vec![0.0; 2 + h.input_dim()];
    grad[0] = 0.5 * w.component_mul(&kf).sum();
    grad[1] = 0.5 * h.noise_variance * w.trace();
    for d in 0..h.input_dim() {
        let lam = h.lengthscales[d];
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let diff = data.inputs[(i, d)] - data.inputs[(j, d)];
                acc += w[(i, j)] * kf[(i, j)] * 0.5 * diff * diff / lam;
            }
        }
        grad[2 + d] = 0.5 * acc;
    }
    Ok((value, grad))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lbfgs: LbfgsOptions,
    /// Hard box on every log-parameter; keeps the Gram matrix factorizable.
    pub log_bounds: (f64, f64),
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { lbfgs: LbfgsOptions::default(), log_bounds: (-18.0, 12.0) }
    }
}

/// Maximizes the marginal likelihood of each output independently.
pub fn train_full(
    data: &Dataset,
    init: &[Hyperparams],
    opts: &TrainOptions,
) -> Result<(Vec<Hyperparams>, Vec<OptReport>)> {
    dim_check("initial hyperparameter sets", data.output_dim(), init.len())?;
    let mut out = Vec::with_capacity(init.len());
    let mut reports = Vec::with_capacity(init.len());
    for (i, h0) in init.iter().enumerate() {
        h0.validate()?;
        dim_check("lengthscales", data.input_dim(), h0.input_dim())?;
        let (lo, hi) = opts.log_bounds;
        let objective = |x: &[f64]| {
            if x.iter().any(|v| !(lo..=hi).contains(v)) {
                return None;
            }
            nlml_with_grad(data, &Hyperparams::from_log(x), i).ok()
        };
        let x0: Vec<f64> = h0.to_log().into_iter().map(|v| v.clamp(lo, hi)).collect();
        let (x, rep) = optim::minimize(objective, &x0, &opts.lbfgs);
        log::info!(
            "output {i}: nlml {:.6} -> {:.6} in {} iterations ({})",
            rep.f_initial,
            rep.f_final,
            rep.iterations,
            rep.message
        );
        out.push(Hyperparams::from_log(&x));
        reports.push(rep);
    }
    Ok((out, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_noise_only_on_identical_inputs() {
        let h = Hyperparams::new(2.0, 0.5, vec![1.0, 1.0]).unwrap();
        assert_eq!(se_kernel(&h, &[0.3, 0.1], &[0.3, 0.1], true).unwrap(), 2.5);
        assert_eq!(se_kernel(&h, &[0.3, 0.1], &[0.3, 0.1], false).unwrap(), 2.0);
        assert!(se_kernel(&h, &[0.3], &[0.3, 0.1], false).is_err());
        assert!(se_kernel(&h, &[f64::NAN, 0.0], &[0.3, 0.1], false).is_err());
    }

    #[test]
    fn jitter_escalation_reports_failure() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky_jittered(&k, "indefinite") {
            Err(Error::Cholesky { jitter, .. }) => assert!((jitter - 1e-6).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let singular = DMatrix::from_element(3, 3, 1.0);
        let (_, j) = cholesky_jittered(&singular, "rank one").unwrap();
        assert!(j > 0.0 && j <= 1e-6);
    }
}
