//! Linear-Gaussian state-space primitives shared by the regression and
//! classification learners.
//!
//! The weights follow a variance-preserving drift
//!
//! `w_n = γ w_{n-1} + sqrt(1 - γ²) ε`,  `ε ~ N(0, σ_w² I)`
//!
//! and are observed through `y_n = w_nᵀ φ_n + v`, `v ~ N(0, σ²)`. For `K`
//! outputs the same covariance is shared by every column of the mean, so a
//! full step costs `O(K m + m²)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Observation noise and prior weight variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Observation-noise variance `σ²`.
    pub sigma2: f64,
    /// Prior (and stationary) weight variance `σ_w²`.
    pub sigmaw2: f64,
    /// Diagonal jitter added after every covariance update. Zero disables it.
    #[serde(default)]
    pub jitter: f64,
}

impl Hyperparams {
    pub fn new(sigma2: f64, sigmaw2: f64) -> Result<Self> {
        let hp = Hyperparams {
            sigma2,
            sigmaw2,
            jitter: 0.0,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// `σ² = 1/K`, `σ_w² = 1/m`.
    pub fn defaults_for(dim: usize, outputs: usize) -> Result<Self> {
        if dim == 0 || outputs == 0 {
            return Err(Error::config(format!(
                "feature dimension and output count must be positive (got m={dim}, K={outputs})"
            )));
        }
        Self::new(1.0 / outputs as f64, 1.0 / dim as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::config(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if !(self.sigmaw2.is_finite() && self.sigmaw2 > 0.0) {
            return Err(Error::config(format!("sigmaw2 must be > 0, got {}", self.sigmaw2)));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::config(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        Ok(())
    }
}

/// `γ = exp(-δ/2)`.
#[inline]
pub fn gamma_from_delta(delta: f64) -> f64 {
    (-0.5 * delta).exp()
}

/// Inverse of [`gamma_from_delta`]; `γ` must lie in `(0, 1]`.
pub fn delta_from_gamma(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    // -2 ln(1) is -0.0; keep the sign clean for serialized configs
    Ok((-2.0 * gamma.ln()).max(0.0))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::domain(format!("gamma must lie in [0, 1], got {gamma}")))
    }
}

/// Symmetric positive-semidefinite covariance over the `m` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    inner: DMatrix<f64>,
}

impl PsdMatrix {
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        PsdMatrix {
            inner: DMatrix::from_diagonal_element(dim, dim, scale),
        }
    }

    /// Wraps a square matrix after symmetrizing it.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        check_dim("covariance columns", matrix.nrows(), matrix.ncols())?;
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("covariance contains non-finite entries"));
        }
        let mut cov = PsdMatrix { inner: matrix };
        cov.symmetrize();
        Ok(cov)
    }

    /// Wraps a matrix as-is. Only meant for fault-injection in diagnostics.
    pub fn from_matrix_unchecked(matrix: DMatrix<f64>) -> Self {
        PsdMatrix { inner: matrix }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    /// `A φ`.
    pub fn mul_vec(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.inner * phi
    }

    /// `φᵀ A φ`.
    pub fn quad_form(&self, phi: &DVector<f64>) -> f64 {
        let a = self.mul_vec(phi);
        phi.dot(&a)
    }

    /// `(A + Aᵀ) / 2` in place.
    pub fn symmetrize(&mut self) {
        let m = self.dim();
        for j in 0..m {
            for i in 0..j {
                let v = 0.5 * (self.inner[(i, j)] + self.inner[(j, i)]);
                self.inner[(i, j)] = v;
                self.inner[(j, i)] = v;
            }
        }
    }

    /// `A ← γ² A + (1 - γ²) σ_w² I`, written as `σ_w² I + γ² (A - σ_w² I)` so
    /// that `A = σ_w² I` is a fixed point in floating point as well.
    pub fn transition(&mut self, gamma: f64, sigmaw2: f64) {
        if gamma == 1.0 {
            return;
        }
        let g2 = gamma * gamma;
        let m = self.dim();
        for j in 0..m {
            for i in 0..m {
                let v = &mut self.inner[(i, j)];
                if i == j {
                    *v = sigmaw2 + g2 * (*v - sigmaw2);
                } else {
                    *v *= g2;
                }
            }
        }
    }

    /// `A ← sym(A) - a aᵀ / denom`, computed over the upper triangle and
    /// mirrored so the result is exactly symmetric.
    pub fn rank_one_downdate(&mut self, a: &DVector<f64>, denom: f64) {
        let m = self.dim();
        let inv = 1.0 / denom;
        for j in 0..m {
            let aj = a[j] * inv;
            for i in 0..=j {
                let v = 0.5 * (self.inner[(i, j)] + self.inner[(j, i)]) - a[i] * aj;
                self.inner[(i, j)] = v;
                self.inner[(j, i)] = v;
            }
        }
    }

    pub fn add_to_diagonal(&mut self, value: f64) {
        for i in 0..self.dim() {
            self.inner[(i, i)] += value;
        }
    }
}

/// Posterior mean(s) of the weights, an `m × K` matrix (`K = 1` for regression).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanState {
    inner: DMatrix<f64>,
}

impl MeanState {
    pub fn zeros(dim: usize, outputs: usize) -> Self {
        MeanState {
            inner: DMatrix::zeros(dim, outputs),
        }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("mean contains non-finite entries"));
        }
        Ok(MeanState { inner: matrix })
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.inner.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn column(&self, k: usize) -> DVector<f64> {
        self.inner.column(k).into_owned()
    }

    /// `Mᵀ φ`, one entry per output.
    pub fn project(&self, phi: &DVector<f64>) -> DVector<f64> {
        self.inner.tr_mul(phi)
    }

    pub fn scale(&mut self, gamma: f64) {
        if gamma != 1.0 {
            self.inner *= gamma;
        }
    }
}

/// How the mean moves during the transition step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanTransition {
    /// `m⁻ = γ m`: drift towards the zero prior mean.
    #[default]
    Shrinking,
    /// `m⁻ = m`: the drift is centred on the previous posterior mean, while
    /// the covariance still relaxes towards `σ_w² I`.
    NonShrinking,
}

/// Mean and shared covariance of the weight posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: MeanState,
    pub cov: PsdMatrix,
}

impl Posterior {
    pub fn prior(dim: usize, outputs: usize, hp: &Hyperparams) -> Result<Self> {
        let (mean, cov) = init_state(dim, outputs, hp)?;
        Ok(Posterior { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn outputs(&self) -> usize {
        self.mean.outputs()
    }

    /// Transition step in place.
    pub fn predict(&mut self, gamma: f64, hp: &Hyperparams, mode: MeanTransition) -> Result<()> {
        check_gamma(gamma)?;
        self.cov.transition(gamma, hp.sigmaw2);
        if mode == MeanTransition::Shrinking {
            self.mean.scale(gamma);
        }
        Ok(())
    }

    /// Kalman update in place with feature `phi` and target row `y`.
    ///
    /// Every input and the shared denominator `σ² + φᵀ A φ` are validated
    /// before anything is written, so an error leaves the posterior as it was.
    pub fn update(&mut self, phi: &DVector<f64>, y: &[f64], hp: &Hyperparams) -> Result<()> {
        check_dim("feature vector", self.dim(), phi.len())?;
        check_dim("target row", self.outputs(), y.len())?;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("feature vector contains NaN or infinity"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("target contains NaN or infinity"));
        }
        let gain = self.cov.mul_vec(phi);
        let denom = hp.sigma2 + phi.dot(&gain);
        if !(denom.is_finite() && denom > 0.0) || gain.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "innovation variance is not a positive finite number ({denom})"
            )));
        }
        let mut residual = self.mean.project(phi);
        for (r, &t) in residual.iter_mut().zip(y) {
            *r = t - *r;
        }
        if residual.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("residual is not finite"));
        }

        self.mean.inner.ger(1.0 / denom, &gain, &residual, 1.0);
        self.cov.rank_one_downdate(&gain, denom);
        if hp.jitter > 0.0 {
            log::trace!("adding covariance jitter {}", hp.jitter);
            self.cov.add_to_diagonal(hp.jitter);
        }
        Ok(())
    }
}

/// Sufficient statistics of a feature vector against the filtered posterior
/// `(M_{n-1}, A_{n-1})`, from which the predicted moments at any `γ` follow
/// without forming `A⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `M_{n-1}ᵀ φ`.
    pub mean: DVector<f64>,
    /// `φᵀ A_{n-1} φ`.
    pub quad: f64,
    /// `σ_w² ‖φ‖²`.
    pub prior_quad: f64,
    /// `φᵀ (A_{n-1} - σ_w² I) φ`, exactly zero when `A_{n-1} = σ_w² I`.
    pub excess: f64,
}

impl Projection {
    /// `φᵀ A⁻ φ` for the transition with coefficient `gamma`.
    pub fn variance_at(&self, gamma: f64) -> f64 {
        if gamma == 1.0 {
            self.quad
        } else {
            (self.prior_quad + gamma * gamma * self.excess).max(0.0)
        }
    }

    /// `d(φᵀ A⁻ φ)/dγ`.
    pub fn variance_slope(&self, gamma: f64) -> f64 {
        2.0 * gamma * self.excess
    }
}

impl Posterior {
    pub fn projection(&self, phi: &DVector<f64>, hp: &Hyperparams) -> Result<Projection> {
        check_dim("feature vector", self.dim(), phi.len())?;
        let a_phi = self.cov.mul_vec(phi);
        let mut quad = 0.0;
        let mut prior_quad = 0.0;
        let mut excess = 0.0;
        for (&p, &ap) in phi.iter().zip(a_phi.iter()) {
            quad += p * ap;
            prior_quad += p * p;
            excess += p * (ap - hp.sigmaw2 * p);
        }
        Ok(Projection {
            mean: self.mean.project(phi),
            quad,
            prior_quad: hp.sigmaw2 * prior_quad,
            excess,
        })
    }
}

/// `M_0 = 0`, `A_0 = σ_w² I`.
pub fn init_state(dim: usize, outputs: usize, hp: &Hyperparams) -> Result<(MeanState, PsdMatrix)> {
    if dim == 0 {
        return Err(Error::config("feature dimension must be at least 1"));
    }
    if outputs == 0 {
        return Err(Error::config("output count must be at least 1"));
    }
    hp.validate()?;
    Ok((
        MeanState::zeros(dim, outputs),
        PsdMatrix::scaled_identity(dim, hp.sigmaw2),
    ))
}

/// `(γ M, γ² A + (1 - γ²) σ_w² I)`.
pub fn predict_step(mean: &MeanState, cov: &PsdMatrix, gamma: f64, hp: &Hyperparams) -> Result<(MeanState, PsdMatrix)> {
    check_dim("covariance", mean.dim(), cov.dim())?;
    let mut post = Posterior {
        mean: mean.clone(),
        cov: cov.clone(),
    };
    post.predict(gamma, hp, MeanTransition::Shrinking)?;
    Ok((post.mean, post.cov))
}

/// Rank-one Kalman update of `(M⁻, A⁻)` with feature `phi` and targets `y`.
pub fn update_step(
    mean: &MeanState,
    cov: &PsdMatrix,
    phi: &DVector<f64>,
    y: &[f64],
    hp: &Hyperparams,
) -> Result<(MeanState, PsdMatrix)> {
    check_dim("covariance", mean.dim(), cov.dim())?;
    let mut post = Posterior {
        mean: mean.clone(),
        cov: cov.clone(),
    };
    post.update(phi, y, hp)?;
    Ok((post.mean, post.cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn hp(sigma2: f64, sigmaw2: f64) -> Hyperparams {
        Hyperparams::new(sigma2, sigmaw2).unwrap()
    }

    #[test]
    fn init_is_zero_mean_scaled_identity() {
        let (mean, cov) = init_state(2, 1, &hp(1.0, 0.5)).unwrap();
        assert_eq!(mean.as_matrix(), &DMatrix::zeros(2, 1));
        assert_eq!(cov.as_matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
    }

    #[test]
    fn default_hyperparams_are_reciprocals() {
        let hp = Hyperparams::defaults_for(3, 100).unwrap();
        assert_eq!(hp.sigma2, 1.0 / 100.0);
        assert_eq!(hp.sigmaw2, 1.0 / 3.0);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(init_state(0, 1, &hp(1.0, 1.0)), Err(Error::Config(_))));
        assert!(matches!(init_state(2, 0, &hp(1.0, 1.0)), Err(Error::Config(_))));
        assert!(Hyperparams::defaults_for(0, 3).is_err());
        assert!(Hyperparams::new(0.0, 1.0).is_err());
        assert!(Hyperparams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn gamma_one_is_identity() {
        let hp = hp(1.0, 0.3);
        let mean = MeanState::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0])).unwrap();
        let cov = PsdMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1])).unwrap();
        let (m2, c2) = predict_step(&mean, &cov, 1.0, &hp).unwrap();
        assert_eq!(m2, mean);
        assert_eq!(c2, cov);
    }

    #[test]
    fn gamma_zero_resets_to_prior() {
        let hp = hp(1.0, 1.0 / 3.0);
        let mean = MeanState::from_matrix(DMatrix::from_element(3, 2, 4.0)).unwrap();
        let cov = PsdMatrix::from_matrix(DMatrix::from_fn(3, 3, |i, j| if i == j { 0.1 } else { 0.01 })).unwrap();
        let (m2, c2) = predict_step(&mean, &cov, 0.0, &hp).unwrap();
        assert_eq!(m2.as_matrix(), &DMatrix::zeros(3, 2));
        assert_eq!(c2.as_matrix(), &DMatrix::from_diagonal_element(3, 3, 1.0 / 3.0));
    }

    #[test]
    fn prior_covariance_is_a_fixed_point() {
        let sigmaw2 = 1.0 / 7.0;
        let hp = hp(1.0, sigmaw2);
        let cov = PsdMatrix::scaled_identity(4, sigmaw2);
        for gamma in [0.0, 0.1, 0.5, 0.9, 0.999, 1.0] {
            let (_, c2) = predict_step(&MeanState::zeros(4, 1), &cov, gamma, &hp).unwrap();
            assert_eq!(c2, cov, "gamma = {gamma}");
        }
    }

    #[test]
    fn gamma_outside_unit_interval_is_rejected() {
        let hp = hp(1.0, 1.0);
        let (mean, cov) = init_state(2, 1, &hp).unwrap();
        for gamma in [-0.1, 1.0001, f64::NAN] {
            assert!(matches!(predict_step(&mean, &cov, gamma, &hp), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn scalar_update_by_hand() {
        // gain = 1 / (1 + 1) = 0.5; mean = 0 + 0.5 * 1; cov = 1 - 1/2
        let hp = hp(1.0, 1.0);
        let (mean, cov) = init_state(1, 1, &hp).unwrap();
        let (m, c) = update_step(&mean, &cov, &dvector![1.0], &[1.0], &hp).unwrap();
        assert_eq!(m.as_matrix()[(0, 0)], 0.5);
        assert_eq!(c.as_matrix()[(0, 0)], 0.5);
    }

    #[test]
    fn zero_feature_is_uninformative() {
        let hp = hp(0.3, 0.7);
        let mean = MeanState::from_matrix(DMatrix::from_row_slice(2, 1, &[0.4, -0.1])).unwrap();
        let cov = PsdMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.6])).unwrap();
        let (m, c) = update_step(&mean, &cov, &dvector![0.0, 0.0], &[3.0], &hp).unwrap();
        assert_eq!(m, mean);
        assert_eq!(c, cov);
    }

    #[test]
    fn non_finite_input_leaves_state_untouched() {
        let hp = hp(1.0, 1.0);
        let mut post = Posterior::prior(2, 1, &hp).unwrap();
        post.update(&dvector![1.0, 2.0], &[0.5], &hp).unwrap();
        let before = post.clone();
        assert!(matches!(
            post.update(&dvector![f64::NAN, 1.0], &[0.5], &hp),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            post.update(&dvector![1.0, 1.0], &[f64::INFINITY], &hp),
            Err(Error::Numeric(_))
        ));
        assert_eq!(post, before);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let hp = hp(1.0, 1.0);
        let mut post = Posterior::prior(3, 2, &hp).unwrap();
        assert!(matches!(
            post.update(&dvector![1.0, 2.0], &[0.0, 1.0], &hp),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            post.update(&dvector![1.0, 2.0, 3.0], &[1.0], &hp),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn update_matches_textbook_formula() {
        let hp = hp(0.2, 0.5);
        let mean = MeanState::from_matrix(DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4])).unwrap();
        let cov = PsdMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.3])).unwrap();
        let phi = dvector![1.5, -0.5];
        let y = [1.0, 0.0];
        let (m, c) = update_step(&mean, &cov, &phi, &y, &hp).unwrap();

        let a = cov.as_matrix();
        let s = hp.sigma2 + (phi.transpose() * a * &phi)[(0, 0)];
        let expected_cov = a - (a * &phi * phi.transpose() * a) / s;
        let resid = nalgebra::RowDVector::from_row_slice(&y) - phi.transpose() * mean.as_matrix();
        let expected_mean = mean.as_matrix() + (a * &phi) * resid / s;
        assert_abs_diff_eq!(c.as_matrix(), &expected_cov, epsilon = 1e-14);
        assert_abs_diff_eq!(m.as_matrix(), &expected_mean, epsilon = 1e-14);
    }

    #[test]
    fn shrinking_and_non_shrinking_only_differ_in_mean() {
        let hp = hp(1.0, 0.5);
        let mut a = Posterior::prior(2, 1, &hp).unwrap();
        a.update(&dvector![1.0, 0.5], &[2.0], &hp).unwrap();
        let mut b = a.clone();
        a.predict(0.8, &hp, MeanTransition::Shrinking).unwrap();
        b.predict(0.8, &hp, MeanTransition::NonShrinking).unwrap();
        assert_eq!(a.cov, b.cov);
        assert_abs_diff_eq!(a.mean.as_matrix(), &(b.mean.as_matrix() * 0.8), epsilon = 1e-15);
    }

    #[test]
    fn delta_gamma_round_trip() {
        assert_eq!(gamma_from_delta(0.0), 1.0);
        assert_eq!(delta_from_gamma(1.0).unwrap(), 0.0);
        let d = delta_from_gamma(0.9).unwrap();
        assert_abs_diff_eq!(gamma_from_delta(d), 0.9, epsilon = 1e-15);
        assert!(delta_from_gamma(0.0).is_err());
    }
}
