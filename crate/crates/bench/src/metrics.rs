//! Tracking-error metrics over a closed-loop log.

use nalgebra::Vector3;

/// `√(1/N Σ ‖ξ(k) − r(k)‖²)`.
pub fn rmse_3d(positions: &[Vector3<f64>], references: &[Vector3<f64>]) -> f64 {
    rmse_over(positions, references, 3)
}

/// Lateral RMSE using the x and y components only.
pub fn rmse_xy(positions: &[Vector3<f64>], references: &[Vector3<f64>]) -> f64 {
    rmse_over(positions, references, 2)
}

fn rmse_over(positions: &[Vector3<f64>], references: &[Vector3<f64>], axes: usize) -> f64 {
    assert_eq!(positions.len(), references.len(), "position and reference logs differ in length");
    if positions.is_empty() {
        return f64::NAN;
    }
    let sum: f64 = positions
        .iter()
        .zip(references)
        .map(|(p, r)| (0..axes).map(|a| (p[a] - r[a]).powi(2)).sum::<f64>())
        .sum();
    (sum / positions.len() as f64).sqrt()
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
