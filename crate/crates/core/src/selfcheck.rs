//! Desk-scale consistency checks: oracle equivalences, gradient checks and
//! covariance invariants. Used by `kocl selfcheck`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::classification::{ClassifierConfig, ClassifierFilter, Learning};
use crate::diagnostics::check_covariance;
use crate::error::Result;
use crate::filter::{Hyperparams, MeanTransition, Posterior, PsdMatrix};
use crate::oracle::{blr_posterior, central_difference, max_relative_error, relative_error};
use crate::regression::{RegressionConfig, RegressionFilter};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Deliberate corruption used to prove the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    CovarianceAsymmetry,
}

#[derive(Debug, Clone, Default)]
pub struct SelfcheckOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// A classifier whose posterior went through `steps` random transitions and
/// updates, with random `δ ∈ [0, 2]` and `α ∈ [0.3, 3]`.
pub fn random_classifier(
    rng: &mut ChaCha8Rng,
    dim: usize,
    classes: usize,
    steps: usize,
    mc_samples: usize,
) -> Result<ClassifierFilter> {
    let hp = Hyperparams::new(rng.random_range(0.05..1.0), rng.random_range(0.1..1.0))?;
    let mut cfg = ClassifierConfig::new(hp);
    cfg.mc_samples = mc_samples;
    cfg.seed = rng.random();
    let mut f = ClassifierFilter::new(dim, classes, cfg)?;
    for _ in 0..steps {
        f.set_delta(rng.random_range(0.0..0.5));
        let phi = random_vector(rng, dim);
        f.observe_label(&phi, rng.random_range(0..classes), Learning::default())?;
    }
    f.set_delta(rng.random_range(0.0..2.0));
    f.set_alpha(rng.random_range(0.3..3.0));
    Ok(f)
}

/// A regression filter in a random non-prior state.
pub fn random_regression(
    rng: &mut ChaCha8Rng,
    dim: usize,
    steps: usize,
    mode: MeanTransition,
) -> Result<RegressionFilter> {
    let hp = Hyperparams::new(rng.random_range(0.05..1.0), rng.random_range(0.1..1.0))?;
    let mut cfg = RegressionConfig::new(hp);
    cfg.learn_delta = false;
    cfg.mean_transition = mode;
    let mut f = RegressionFilter::new(dim, cfg)?;
    let w = random_vector(rng, dim);
    for _ in 0..steps {
        f.set_delta(rng.random_range(0.0..0.5));
        let phi = random_vector(rng, dim);
        let noise: f64 = rng.sample(StandardNormal);
        f.observe(&phi, w.dot(&phi) + 0.3 * noise)?;
    }
    f.set_delta(rng.random_range(0.0..2.0));
    Ok(f)
}

fn result(name: &'static str, value: f64, threshold: f64, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed: value.is_finite() && value < threshold,
        value,
        threshold,
        detail,
    }
}

/// Recursion with `γ ≡ 1` against the batch posterior at every step.
pub fn check_blr_equivalence(seed: u64, streams: usize, len: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for s in 0..streams {
        let dim = [1, 2, 4, 8][s % 4];
        let hp = Hyperparams::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0))?;
        let mut cfg = RegressionConfig::new(hp);
        cfg.learn_delta = false;
        let mut f = RegressionFilter::new(dim, cfg)?;
        let w = random_vector(&mut rng, dim);
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let phi = random_vector(&mut rng, dim);
            let y = w.dot(&phi) + rng.sample::<f64, _>(StandardNormal);
            f.observe(&phi, y)?;
            data.push((phi, y));
            let (mean, cov) = blr_posterior(&data, dim, &hp)?;
            let post = f.posterior();
            worst = worst
                .max(max_relative_error(
                    post.mean.as_matrix(),
                    &DMatrix::from_column_slice(dim, 1, mean.as_slice()),
                ))
                .max(max_relative_error(post.cov.as_matrix(), &cov));
        }
    }
    Ok(result(
        "blr-equivalence",
        worst,
        1e-8,
        format!("{streams} streams x {len} steps, max relative error"),
    ))
}

/// Shared-covariance recursion against `K` independent scalar regressions.
pub fn check_column_equivalence(seed: u64, streams: usize, len: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..streams {
        let dim = rng.random_range(1..=8);
        let classes = rng.random_range(1..=5);
        let hp = Hyperparams::defaults_for(dim, classes)?;
        let mut post = Posterior::prior(dim, classes, &hp)?;
        let mut cols: Vec<Posterior> = (0..classes)
            .map(|_| Posterior::prior(dim, 1, &hp))
            .collect::<Result<_>>()?;
        for _ in 0..len {
            let gamma = rng.random_range(0.5..=1.0);
            let phi = random_vector(&mut rng, dim);
            let label = rng.random_range(0..classes);
            let mut target = vec![0.0; classes];
            target[label] = 1.0;
            post.predict(gamma, &hp, MeanTransition::Shrinking)?;
            post.update(&phi, &target, &hp)?;
            for (k, col) in cols.iter_mut().enumerate() {
                col.predict(gamma, &hp, MeanTransition::Shrinking)?;
                col.update(&phi, &[target[k]], &hp)?;
                let diff = (post.mean.column(k) - col.mean.column(0)).amax();
                worst = worst.max(diff).max((post.cov.as_matrix() - col.cov.as_matrix()).amax());
            }
        }
    }
    Ok(result(
        "column-equivalence",
        worst,
        1e-10,
        format!("{streams} streams x {len} steps, max abs difference"),
    ))
}

/// Analytic regression `δ` gradient against central differences.
pub fn check_regression_gradient(seed: u64, states: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..states {
        let mode = if i % 2 == 0 {
            MeanTransition::Shrinking
        } else {
            MeanTransition::NonShrinking
        };
        let dim = rng.random_range(1..=6);
        let f = random_regression(&mut rng, dim, 10, mode)?;
        let phi = random_vector(&mut rng, dim);
        let y = 2.0 * rng.sample::<f64, _>(StandardNormal);
        let analytic = f.delta_gradient(&phi, y)?;
        let numeric = central_difference(|d| f.log_predictive_at_delta(&phi, y, d).unwrap(), f.delta(), 1e-6);
        worst = worst.max(relative_error(analytic, numeric, 1e-8));
    }
    Ok(result(
        "regression-delta-gradient",
        worst,
        1e-6,
        format!("{states} random states, max relative error"),
    ))
}

/// Analytic `δ` and `α` gradients of the Monte-Carlo log estimate against
/// central differences with common random numbers.
pub fn check_classifier_gradients(seed: u64, states: usize, mc_samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..states {
        let dim = rng.random_range(1..=6);
        let classes = rng.random_range(2..=5);
        let f = random_classifier(&mut rng, dim, classes, 10, mc_samples)?;
        let phi = random_vector(&mut rng, dim);
        let class = rng.random_range(0..classes);
        let noise = f.noise_for(rng.random());
        let (dd, da) = f.delta_alpha_gradients(&phi, class, &noise)?;
        let h = 1e-5;
        let fd_delta = central_difference(
            |d| f.log_predictive_with(&phi, class, d, f.alpha(), &noise).unwrap(),
            f.delta(),
            h,
        );
        let fd_alpha = central_difference(
            |a| f.log_predictive_with(&phi, class, f.delta(), a, &noise).unwrap(),
            f.alpha(),
            h,
        );
        worst = worst
            .max(relative_error(dd, fd_delta, 1e-8))
            .max(relative_error(da, fd_alpha, 1e-8));
    }
    Ok(result(
        "classifier-gradients",
        worst,
        1e-5,
        format!("{states} random states, S={mc_samples}, max relative error"),
    ))
}

/// Random predict/update walk checking symmetry, PSD-ness and the
/// eigenvalue ceiling after every step.
pub fn check_covariance_invariants(seed: u64, steps: usize, fault: Option<Fault>) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 6;
    let hp = Hyperparams::new(0.05, 0.5)?;
    let mut post = Posterior::prior(dim, 2, &hp)?;
    for step in 0..steps {
        post.predict(rng.random_range(0.0..=1.0), &hp, MeanTransition::Shrinking)?;
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let phi = random_vector(&mut rng, dim) * scale;
        post.update(&phi, &[rng.random_range(0.0..1.0), 0.0], &hp)?;
        let mut cov = post.cov.clone();
        if fault == Some(Fault::CovarianceAsymmetry) && step == steps / 2 {
            let mut a = cov.into_matrix();
            a[(0, 1)] += 1e-6;
            cov = PsdMatrix::from_matrix_unchecked(a);
        }
        if let Err(v) = check_covariance(&cov, hp.sigmaw2) {
            return Ok(CheckResult {
                name: "covariance-invariants",
                passed: false,
                value: step as f64,
                threshold: steps as f64,
                detail: format!("step {step}: {v}"),
            });
        }
    }
    Ok(CheckResult {
        name: "covariance-invariants",
        passed: true,
        value: steps as f64,
        threshold: steps as f64,
        detail: format!("{steps} steps: symmetry, positive-semidefinite, eigenvalue-ceiling"),
    })
}

pub fn run_all(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>> {
    let s = opts.seed;
    Ok(vec![
        check_blr_equivalence(s, 4, 50)?,
        check_column_equivalence(s + 1, 5, 50)?,
        check_regression_gradient(s + 2, 50)?,
        check_classifier_gradients(s + 3, 50, 64)?,
        check_covariance_invariants(s + 4, 2000, opts.fault)?,
    ])
}
