//! Multi-class online learner.
//!
//! The Kalman recursion runs on one-hot targets with a Gaussian surrogate
//! likelihood, so all `K` weight columns share one covariance. Predictions
//! combine the resulting Gaussian over the logits `f ~ N(μ, s² I)` with the
//! exact softmax by Monte Carlo:
//!
//! `p(k) ≈ 1/S Σ_s softmax(α μ + α s ε⁽ˢ⁾)_k`,  `ε⁽ˢ⁾ ~ N(0, I)`.
//!
//! The same draws `ε⁽ˢ⁾` serve the loss value and both gradients of a step.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::filter::{gamma_from_delta, Hyperparams, MeanTransition, Posterior, Projection};

/// Floor applied to Monte-Carlo probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
/// Lower clip for the calibration parameter.
pub const ALPHA_MIN: f64 = 1e-6;

/// Gaussian over the logits: mean `mu`, isotropic variance `s2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMoments {
    pub mu: DVector<f64>,
    pub s2: f64,
}

impl LogitMoments {
    pub fn classes(&self) -> usize {
        self.mu.len()
    }
}

/// Standard-normal draws, one row of length `K` per Monte-Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws {
    eps: DMatrix<f64>,
}

impl NoiseDraws {
    /// Draws for the given `(seed, stream)` pair. ChaCha's stream parameter
    /// makes the draws a function of the pair alone, independent of whatever
    /// was sampled before.
    pub fn generate(seed: u64, stream: u64, samples: usize, classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let eps = DMatrix::from_fn(samples, classes, |_, _| rng.sample::<f64, _>(StandardNormal));
        NoiseDraws { eps }
    }

    pub fn from_matrix(eps: DMatrix<f64>) -> Self {
        NoiseDraws { eps }
    }

    pub fn samples(&self) -> usize {
        self.eps.nrows()
    }

    pub fn classes(&self) -> usize {
        self.eps.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.eps
    }
}

fn softmax_into(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Monte-Carlo estimate of the class probabilities under calibration `alpha`.
pub fn mc_class_probs(moments: &LogitMoments, alpha: f64, noise: &NoiseDraws) -> DVector<f64> {
    let k = moments.classes();
    let s = moments.s2.max(0.0).sqrt();
    let mut z = vec![0.0; k];
    if s == 0.0 || noise.samples() == 0 {
        for (zj, mj) in z.iter_mut().zip(moments.mu.iter()) {
            *zj = alpha * mj;
        }
        softmax_into(&mut z);
        return DVector::from_vec(z);
    }
    debug_assert_eq!(noise.classes(), k);
    let mut acc = DVector::zeros(k);
    for row in noise.eps.row_iter() {
        for j in 0..k {
            z[j] = alpha * (moments.mu[j] + s * row[j]);
        }
        softmax_into(&mut z);
        for j in 0..k {
            acc[j] += z[j];
        }
    }
    acc / noise.samples() as f64
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(probs: &DVector<f64>) -> usize {
    let mut best = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = j;
        }
    }
    best
}

/// `log max(p, PROB_FLOOR)`.
pub fn floored_log(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Log of the Monte-Carlo probability of `class` and its derivatives.
///
/// `dmu` and `ds` are the derivatives of the logit mean and the logit
/// standard deviation with respect to some scalar `t`; the returned
/// `d_t` is the derivative of the log estimate along that direction.
/// The derivative with respect to `alpha` is returned alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McLogProb {
    pub log_prob: f64,
    pub d_t: f64,
    pub d_alpha: f64,
}

pub fn mc_log_prob_with_grads(
    moments: &LogitMoments,
    dmu: &DVector<f64>,
    ds: f64,
    alpha: f64,
    noise: &NoiseDraws,
    class: usize,
) -> McLogProb {
    let k = moments.classes();
    let s = moments.s2.max(0.0).sqrt();
    let samples = noise.samples().max(1);
    let mut z = vec![0.0; k];
    let mut dz_t = vec![0.0; k];
    let mut dz_a = vec![0.0; k];
    let mut p = 0.0;
    let mut gp_t = 0.0;
    let mut gp_a = 0.0;
    for r in 0..samples {
        for j in 0..k {
            let e = if noise.samples() == 0 { 0.0 } else { noise.eps[(r, j)] };
            let f = moments.mu[j] + s * e;
            z[j] = alpha * f;
            dz_a[j] = f;
            dz_t[j] = alpha * (dmu[j] + ds * e);
        }
        softmax_into(&mut z);
        let mean_t: f64 = z.iter().zip(&dz_t).map(|(pi, d)| pi * d).sum();
        let mean_a: f64 = z.iter().zip(&dz_a).map(|(pi, d)| pi * d).sum();
        let pk = z[class];
        p += pk;
        gp_t += pk * (dz_t[class] - mean_t);
        gp_a += pk * (dz_a[class] - mean_a);
    }
    let n = samples as f64;
    p /= n;
    if p < PROB_FLOOR {
        return McLogProb {
            log_prob: PROB_FLOOR.ln(),
            d_t: 0.0,
            d_alpha: 0.0,
        };
    }
    McLogProb {
        log_prob: p.ln(),
        d_t: gp_t / n / p,
        d_alpha: gp_a / n / p,
    }
}

/// Which parameters take an SGD step during [`ClassifierFilter::observe_class`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Learning {
    pub delta: bool,
    pub alpha: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hp: Hyperparams,
    pub delta_init: f64,
    pub alpha_init: f64,
    pub delta_lr: f64,
    pub alpha_lr: f64,
    /// Monte-Carlo samples `S` per evaluation.
    pub mc_samples: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn new(hp: Hyperparams) -> Self {
        ClassifierConfig {
            hp,
            delta_init: 0.0,
            alpha_init: 1.0,
            delta_lr: 0.01,
            alpha_lr: 0.1,
            mc_samples: 32,
            seed: 0,
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
        if !(self.alpha_init.is_finite() && self.alpha_init > 0.0) {
            return Err(Error::config(format!(
                "alpha_init must be > 0, got {}",
                self.alpha_init
            )));
        }
        for (name, lr) in [("delta_lr", self.delta_lr), ("alpha_lr", self.alpha_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.mc_samples == 0 {
            return Err(Error::config("mc_samples must be at least 1"));
        }
        Ok(())
    }
}

/// Record of one [`ClassifierFilter::observe_class`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStep {
    pub probs: DVector<f64>,
    pub predicted: usize,
    /// Floored log probability of the revealed class, scored before updating.
    pub log_predictive: f64,
    /// `γ` applied by the transition of this step.
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierFilter {
    post: Posterior,
    delta: f64,
    alpha: f64,
    cfg: ClassifierConfig,
    step: u64,
}

impl ClassifierFilter {
    pub fn new(dim: usize, classes: usize, cfg: ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ClassifierFilter {
            post: Posterior::prior(dim, classes, &cfg.hp)?,
            delta: cfg.delta_init,
            alpha: cfg.alpha_init,
            cfg,
            step: 0,
        })
    }

    /// Builds a filter around an existing posterior, e.g. for diagnostics.
    pub fn with_posterior(post: Posterior, cfg: ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        check_dim("covariance", post.dim(), post.cov.dim())?;
        Ok(ClassifierFilter {
            post,
            delta: cfg.delta_init,
            alpha: cfg.alpha_init,
            cfg,
            step: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.post.dim()
    }

    pub fn classes(&self) -> usize {
        self.post.outputs()
    }

    pub fn posterior(&self) -> &Posterior {
        &self.post
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma(&self) -> f64 {
        gamma_from_delta(self.delta)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_delta(&mut self, delta: f64) {
        self.delta = delta.max(0.0);
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha.max(ALPHA_MIN);
    }

    /// Number of Kalman updates applied so far; also the noise stream index
    /// of the next point.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn noise_for(&self, stream: u64) -> NoiseDraws {
        NoiseDraws::generate(self.cfg.seed, stream, self.cfg.mc_samples, self.classes())
    }

    fn check_phi(&self, phi: &DVector<f64>) -> Result<()> {
        check_dim("feature vector", self.dim(), phi.len())?;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("feature vector contains NaN or infinity"));
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class < self.classes() {
            Ok(())
        } else {
            Err(Error::domain(format!("class {class} outside [0, {})", self.classes())))
        }
    }

    fn moments_from(proj: &Projection, gamma: f64) -> LogitMoments {
        LogitMoments {
            mu: &proj.mean * gamma,
            s2: proj.variance_at(gamma),
        }
    }

    /// Logit moments under the transition with the current `γ`.
    pub fn logit_moments(&self, phi: &DVector<f64>) -> Result<LogitMoments> {
        self.logit_moments_at_delta(phi, self.delta)
    }

    pub fn logit_moments_at_delta(&self, phi: &DVector<f64>, delta: f64) -> Result<LogitMoments> {
        self.check_phi(phi)?;
        let proj = self.post.projection(phi, &self.cfg.hp)?;
        Ok(Self::moments_from(&proj, gamma_from_delta(delta)))
    }

    pub fn class_probs(&self, phi: &DVector<f64>, noise: &NoiseDraws) -> Result<DVector<f64>> {
        let moments = self.logit_moments(phi)?;
        Ok(mc_class_probs(&moments, self.alpha, noise))
    }

    /// Floored log Monte-Carlo probability of `class` with draws for the
    /// next step index.
    pub fn log_predictive(&self, phi: &DVector<f64>, class: usize) -> Result<f64> {
        let noise = self.noise_for(self.step);
        self.log_predictive_with(phi, class, self.delta, self.alpha, &noise)
    }

    /// Same as [`Self::log_predictive`] with explicit `delta`, `alpha` and draws.
    pub fn log_predictive_with(
        &self,
        phi: &DVector<f64>,
        class: usize,
        delta: f64,
        alpha: f64,
        noise: &NoiseDraws,
    ) -> Result<f64> {
        self.check_class(class)?;
        let moments = self.logit_moments_at_delta(phi, delta)?;
        Ok(floored_log(mc_class_probs(&moments, alpha, noise)[class]))
    }

    /// Gradients of the log estimate with respect to `δ` and `α`, holding the
    /// filtered posterior fixed and reusing `noise`.
    pub fn delta_alpha_gradients(&self, phi: &DVector<f64>, class: usize, noise: &NoiseDraws) -> Result<(f64, f64)> {
        let g = self.log_prob_with_grads(phi, class, noise)?;
        Ok((g.d_t, g.d_alpha))
    }

    /// Log estimate with its `δ` and `α` derivatives (`d_t` is w.r.t. `δ`).
    pub fn log_prob_with_grads(&self, phi: &DVector<f64>, class: usize, noise: &NoiseDraws) -> Result<McLogProb> {
        self.check_phi(phi)?;
        self.check_class(class)?;
        check_dim("noise classes", self.classes(), noise.classes())?;
        let gamma = self.gamma();
        let proj = self.post.projection(phi, &self.cfg.hp)?;
        let moments = Self::moments_from(&proj, gamma);
        let s = moments.s2.sqrt();
        // μ = γ Mᵀφ, s² = σ_w²‖φ‖² + γ² φᵀ(A - σ_w² I)φ
        let ds = if s > 0.0 {
            0.5 * proj.variance_slope(gamma) / s
        } else {
            0.0
        };
        let mut g = mc_log_prob_with_grads(&moments, &proj.mean, ds, self.alpha, noise, class);
        g.d_t *= -0.5 * gamma;
        Ok(g)
    }

    /// Ascent step on `δ`, clipped at zero.
    pub fn step_delta(&mut self, grad: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::numeric(format!("delta gradient is not finite ({grad})")));
        }
        self.delta = (self.delta + self.cfg.delta_lr * grad).max(0.0);
        Ok(())
    }

    /// Ascent step on `α`, clipped at [`ALPHA_MIN`].
    pub fn step_alpha(&mut self, grad: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::numeric(format!("alpha gradient is not finite ({grad})")));
        }
        self.alpha = (self.alpha + self.cfg.alpha_lr * grad).max(ALPHA_MIN);
        Ok(())
    }

    /// Transition (optional) with the current `γ` followed by the Kalman
    /// update on the one-hot target of `class`.
    pub fn kalman_step(&mut self, phi: &DVector<f64>, class: usize, transition: bool) -> Result<()> {
        self.check_phi(phi)?;
        self.check_class(class)?;
        let mut target = vec![0.0; self.classes()];
        target[class] = 1.0;
        if transition {
            let gamma = self.gamma();
            self.post.predict(gamma, &self.cfg.hp, MeanTransition::Shrinking)?;
        }
        self.post.update(phi, &target, &self.cfg.hp)?;
        self.step += 1;
        Ok(())
    }

    /// Full prequential step for a one-hot label.
    pub fn observe_class(&mut self, phi: &DVector<f64>, y_onehot: &[f64], learning: Learning) -> Result<ClassStep> {
        let class = onehot_class(y_onehot, self.classes())?;
        self.observe_label(phi, class, learning)
    }

    /// [`Self::observe_class`] with the label given as a class index.
    pub fn observe_label(&mut self, phi: &DVector<f64>, class: usize, learning: Learning) -> Result<ClassStep> {
        self.check_phi(phi)?;
        self.check_class(class)?;
        let noise = self.noise_for(self.step);
        let moments = self.logit_moments(phi)?;
        let probs = mc_class_probs(&moments, self.alpha, &noise);
        let predicted = argmax(&probs);
        let log_predictive = floored_log(probs[class]);

        if learning.delta || learning.alpha {
            let (d_delta, d_alpha) = self.delta_alpha_gradients(phi, class, &noise)?;
            if !(d_delta.is_finite() && d_alpha.is_finite()) {
                return Err(Error::numeric("non-finite gradient"));
            }
            if learning.delta {
                self.step_delta(d_delta)?;
            }
            if learning.alpha {
                self.step_alpha(d_alpha)?;
            }
        }
        let gamma = self.gamma();
        self.kalman_step(phi, class, true)?;
        Ok(ClassStep {
            probs,
            predicted,
            log_predictive,
            gamma,
        })
    }
}

/// Class index of a one-hot row.
pub fn onehot_class(y: &[f64], classes: usize) -> Result<usize> {
    check_dim("one-hot label", classes, y.len())?;
    let mut hot = None;
    for (j, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::domain("label has more than one hot entry"));
            }
            hot = Some(j);
        } else if v != 0.0 {
            return Err(Error::domain(format!("label entry {j} is {v}, expected 0 or 1")));
        }
    }
    hot.ok_or_else(|| Error::domain("label has no hot entry"))
}
