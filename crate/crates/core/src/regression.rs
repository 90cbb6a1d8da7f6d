//! Univariate-output online learner with a learnable forgetting coefficient.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::filter::{gamma_from_delta, Hyperparams, MeanTransition, Posterior, Projection};

/// Gaussian predictive density `N(y | mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPrediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let r = y - self.mean;
        -0.5 * ((2.0 * PI * self.variance).ln() + r * r / self.variance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub hp: Hyperparams,
    /// Initial `δ`; zero means `γ = 1`.
    pub delta_init: f64,
    pub delta_lr: f64,
    pub learn_delta: bool,
    pub mean_transition: MeanTransition,
}

impl RegressionConfig {
    pub fn new(hp: Hyperparams) -> Self {
        RegressionConfig {
            hp,
            delta_init: 0.0,
            delta_lr: 1.0,
            learn_delta: true,
            mean_transition: MeanTransition::Shrinking,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if !(self.delta_init.is_finite() && self.delta_init >= 0.0) {
            return Err(Error::config(format!(
                "delta_init must be >= 0, got {}",
                self.delta_init
            )));
        }
        if !(self.delta_lr.is_finite() && self.delta_lr > 0.0) {
            return Err(Error::config(format!("delta_lr must be > 0, got {}", self.delta_lr)));
        }
        Ok(())
    }
}

/// Outcome of one prequential step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionStep {
    /// Predictive density used for scoring, before any update.
    pub prediction: GaussianPrediction,
    /// `log N(y | prediction)`.
    pub log_predictive: f64,
    /// `γ` used by the transition of this step (after the `δ` update).
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFilter {
    post: Posterior,
    delta: f64,
    cfg: RegressionConfig,
}

impl RegressionFilter {
    pub fn new(dim: usize, cfg: RegressionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(RegressionFilter {
            post: Posterior::prior(dim, 1, &cfg.hp)?,
            delta: cfg.delta_init,
            cfg,
        })
    }

    pub fn dim(&self) -> usize {
        self.post.dim()
    }

    pub fn posterior(&self) -> &Posterior {
        &self.post
    }

    pub fn config(&self) -> &RegressionConfig {
        &self.cfg
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma(&self) -> f64 {
        gamma_from_delta(self.delta)
    }

    /// Overrides `δ`, clipped at zero.
    pub fn set_delta(&mut self, delta: f64) {
        self.delta = delta.max(0.0);
    }

    /// Predictive density for `phi` under the transition with the current `γ`.
    pub fn predict(&self, phi: &DVector<f64>) -> Result<GaussianPrediction> {
        let proj = self.post.projection(phi, &self.cfg.hp)?;
        Ok(self.moments(&proj, self.gamma()))
    }

    fn moments(&self, proj: &Projection, gamma: f64) -> GaussianPrediction {
        let base = proj.mean[0];
        let mean = match self.cfg.mean_transition {
            MeanTransition::Shrinking => gamma * base,
            MeanTransition::NonShrinking => base,
        };
        GaussianPrediction {
            mean,
            variance: proj.variance_at(gamma) + self.cfg.hp.sigma2,
        }
    }

    /// Log predictive density of `y` had the filter used `delta` instead of
    /// its current value. The filtered posterior is held fixed.
    pub fn log_predictive_at_delta(&self, phi: &DVector<f64>, y: f64, delta: f64) -> Result<f64> {
        let proj = self.post.projection(phi, &self.cfg.hp)?;
        Ok(self.moments(&proj, gamma_from_delta(delta)).log_density(y))
    }

    /// `∂/∂δ log N(y | φᵀm⁻, φᵀA⁻φ + σ²)` at the current `δ`, with the
    /// filtered posterior treated as constant.
    pub fn delta_gradient(&self, phi: &DVector<f64>, y: f64) -> Result<f64> {
        let proj = self.post.projection(phi, &self.cfg.hp)?;
        Ok(self.delta_gradient_from(&proj, y))
    }

    fn delta_gradient_from(&self, proj: &Projection, y: f64) -> f64 {
        let gamma = self.gamma();
        let pred = self.moments(proj, gamma);
        let v = pred.variance;
        let r = y - pred.mean;
        let dmean = match self.cfg.mean_transition {
            MeanTransition::Shrinking => proj.mean[0],
            MeanTransition::NonShrinking => 0.0,
        };
        let dvar = proj.variance_slope(gamma);
        let d_gamma = -0.5 * dvar / v + r * dmean / v + 0.5 * r * r * dvar / (v * v);
        // dγ/dδ = -γ/2
        d_gamma * (-0.5 * gamma)
    }

    /// Scores `(phi, y)`, takes an SGD step on `δ`, then runs the transition
    /// with the new `γ` and the Kalman update.
    pub fn observe(&mut self, phi: &DVector<f64>, y: f64) -> Result<RegressionStep> {
        check_dim("feature vector", self.dim(), phi.len())?;
        if !y.is_finite() || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("observation contains NaN or infinity"));
        }
        let proj = self.post.projection(phi, &self.cfg.hp)?;
        let prediction = self.moments(&proj, self.gamma());
        let log_predictive = prediction.log_density(y);

        let mut delta = self.delta;
        if self.cfg.learn_delta {
            let grad = self.delta_gradient_from(&proj, y);
            if !grad.is_finite() {
                return Err(Error::numeric(format!("delta gradient is not finite ({grad})")));
            }
            delta = (delta + self.cfg.delta_lr * grad).max(0.0);
        }
        let gamma = gamma_from_delta(delta);

        self.post.predict(gamma, &self.cfg.hp, self.cfg.mean_transition)?;
        self.post.update(phi, &[y], &self.cfg.hp)?;
        self.delta = delta;
        Ok(RegressionStep {
            prediction,
            log_predictive,
            gamma,
        })
    }
}
