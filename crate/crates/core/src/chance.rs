//! Gaussian chance-constraint tightening.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Standard normal quantile `Φ⁻¹(p)` for `p ∈ (0, 1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Argument(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// `Φ⁻¹(p_x) √(αᵀΣα)`; slightly negative quadratic forms from round-off are
/// treated as zero.
pub fn tightening_offset(alpha: &DVector<f64>, sigma: &DMatrix<f64>, p_x: f64) -> Result<f64> {
    let v = (alpha.transpose() * sigma * alpha)[(0, 0)];
    let slack = 1e-12 * (1.0 + sigma.amax()) * alpha.norm_squared().max(1.0);
    if v < -slack || !v.is_finite() {
        return Err(Error::Numerical(format!("αᵀΣα = {v:e} is negative; covariance is not PSD")));
    }
    Ok(normal_quantile(p_x)? * v.max(0.0).sqrt())
}

/// Tightened bound of the half-space `αᵀx ≤ b` for `x ~ N(μ, Σ)` so that
/// `αᵀμ ≤ b'` implies `Pr(αᵀx ≤ b) ≥ p_x`.
pub fn tighten_halfspace(alpha: &DVector<f64>, b: f64, sigma: &DMatrix<f64>, p_x: f64) -> Result<f64> {
    Ok(b - tightening_offset(alpha, sigma, p_x)?)
}
