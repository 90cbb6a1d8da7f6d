use std::fmt;

use nalgebra::SymmetricEigen;

use crate::filter::PsdMatrix;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

/// A covariance invariant that failed, by name.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantViolation {
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant `{}` violated: {}", self.invariant, self.detail)
    }
}

impl std::error::Error for InvariantViolation {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceReport {
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

pub fn max_asymmetry(cov: &PsdMatrix) -> f64 {
    let a = cov.as_matrix();
    let m = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..m {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Checks symmetry, numerical PSD-ness and the `σ_w²` eigenvalue ceiling.
pub fn check_covariance(cov: &PsdMatrix, sigmaw2: f64) -> Result<CovarianceReport, InvariantViolation> {
    let max_asymmetry = max_asymmetry(cov);
    if max_asymmetry > SYMMETRY_TOL {
        return Err(InvariantViolation {
            invariant: "symmetry",
            detail: format!("max |A_ij - A_ji| = {max_asymmetry:e} > {SYMMETRY_TOL:e}"),
        });
    }
    let eig = SymmetricEigen::new(cov.as_matrix().clone()).eigenvalues;
    let min_eigenvalue = eig.min();
    let max_eigenvalue = eig.max();
    if min_eigenvalue < -PSD_TOL {
        return Err(InvariantViolation {
            invariant: "positive-semidefinite",
            detail: format!("min eigenvalue {min_eigenvalue:e} < -{PSD_TOL:e}"),
        });
    }
    if max_eigenvalue > sigmaw2 + PSD_TOL {
        return Err(InvariantViolation {
            invariant: "eigenvalue-ceiling",
            detail: format!("max eigenvalue {max_eigenvalue:e} > sigmaw2 {sigmaw2:e}"),
        });
    }
    Ok(CovarianceReport {
        max_asymmetry,
        min_eigenvalue,
        max_eigenvalue,
    })
}

/// Indices `t` where `trace[t]` is no larger than any value within
/// `half_window` positions and strictly below both window ends.
pub fn local_minima(trace: &[f64], half_window: usize) -> Vec<usize> {
    if trace.is_empty() {
        return Vec::new();
    }
    let last = trace.len() - 1;
    (0..trace.len())
        .filter(|&t| {
            let lo = t.saturating_sub(half_window);
            let hi = (t + half_window).min(last);
            let v = trace[t];
            v < trace[lo] && v < trace[hi] && trace[lo..=hi].iter().all(|&w| w >= v)
        })
        .collect()
}

/// How many of `positions` have a local minimum within `radius` of them.
pub fn positions_near(minima: &[usize], positions: &[usize], radius: usize) -> usize {
    positions
        .iter()
        .filter(|&&p| minima.iter().any(|&t| t.abs_diff(p) <= radius))
        .count()
}
