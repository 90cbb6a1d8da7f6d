//! Reference computations that do not go through the recursive filter:
//! the batch Bayesian-linear-regression posterior and finite differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::filter::Hyperparams;

/// Batch posterior of `y = wᵀφ + N(0, σ²)` under `w ~ N(0, σ_w² I)`:
///
/// `A = (σ⁻² Σ φφᵀ + σ_w⁻² I)⁻¹`, `m = A σ⁻² Σ φ y`.
pub fn blr_posterior(
    data: &[(DVector<f64>, f64)],
    dim: usize,
    hp: &Hyperparams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    hp.validate()?;
    let mut precision = DMatrix::from_diagonal_element(dim, dim, 1.0 / hp.sigmaw2);
    let mut rhs = DVector::zeros(dim);
    let inv_s2 = 1.0 / hp.sigma2;
    for (phi, y) in data {
        check_dim("feature vector", dim, phi.len())?;
        precision += phi * phi.transpose() * inv_s2;
        rhs += phi * (y * inv_s2);
    }
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::numeric("posterior precision is not positive definite"))?;
    Ok((chol.solve(&rhs), chol.inverse()))
}

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Max-norm relative error `‖a - b‖∞ / ‖b‖∞`.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).amax();
    let scale = b.amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
