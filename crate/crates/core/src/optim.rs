//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Used for every hyperparameter / inducing-input fit in the crate. The
//! objective returns `None` outside its domain (e.g. a Gram matrix that
//! cannot be factorized); the line search treats that as an infinite value.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when `‖∇f‖∞ ≤ grad_tol`.
    pub grad_tol: f64,
    /// Stop when the relative decrease over one iteration falls below this.
    pub rel_tol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { max_iters: 300, memory: 10, grad_tol: 1e-6, rel_tol: 1e-12, max_line_search: 40 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub f_initial: f64,
    pub f_final: f64,
    pub converged: bool,
    pub message: String,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`. Always returns the best point seen; failure to
/// make progress is reported through [`OptReport::converged`], not an error.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> (Vec<f64>, OptReport)
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut evaluations = 1;
    let (mut fx, mut g) = match f(x0) {
        Some(v) if v.0.is_finite() => v,
        _ => {
            return (
                x0.to_vec(),
                OptReport {
                    iterations: 0,
                    evaluations,
                    f_initial: f64::INFINITY,
                    f_final: f64::INFINITY,
                    converged: false,
                    message: "objective not finite at the initial point".into(),
                },
            )
        }
    };
    let f_initial = fx;
    let mut x = x0.to_vec();
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut message = String::from("iteration limit reached");
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iters {
        iterations = it + 1;
        if inf_norm(&g) <= opts.grad_tol {
            converged = true;
            message = "gradient tolerance reached".into();
            iterations = it;
            break;
        }

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            for i in 0..n {
                d[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            for v in d.iter_mut() {
                *v *= gamma;
            }
        } else {
            let gn = inf_norm(&g).max(1e-12);
            let scale = (1.0 / gn).min(1.0);
            for v in d.iter_mut() {
                *v *= scale;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for i in 0..n {
                d[i] += s[i] * (a - b);
            }
        }

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // Not a descent direction; restart from steepest descent.
            hist.clear();
            let gn = inf_norm(&g).max(1e-12);
            d = g.iter().map(|v| -v / gn).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_line_search {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            evaluations += 1;
            if let Some((ft, gt)) = f(&xt) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((xn, fnew, gnew)) = accepted else {
            if !hist.is_empty() {
                // Stale curvature pairs; retry along steepest descent.
                hist.clear();
                continue;
            }
            message = "line search failed to decrease the objective".into();
            converged = inf_norm(&g) <= opts.grad_tol * 100.0;
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }

        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        if decrease <= opts.rel_tol * fx.abs().max(1.0) {
            converged = true;
            message = "relative decrease below tolerance".into();
            break;
        }
    }

    (x, OptReport { iterations, evaluations, f_initial, f_final: fx, converged, message })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let opts = LbfgsOptions { max_iters: 500, rel_tol: 0.0, grad_tol: 1e-9, ..Default::default() };
        let (x, rep) = minimize(f, &[-1.2, 1.0], &opts);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?} {rep:?}");
        assert!(rep.f_final <= rep.f_initial);
    }

    #[test]
    fn domain_errors_are_backtracked() {
        // f = x - ln(x), undefined for x <= 0, minimum at 1.
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                None
            } else {
                Some((x[0] - x[0].ln(), vec![1.0 - 1.0 / x[0]]))
            }
        };
        let (x, rep) = minimize(f, &[5.0], &LbfgsOptions::default());
        assert!((x[0] - 1.0).abs() < 1e-5, "{x:?} {rep:?}");
    }
}
