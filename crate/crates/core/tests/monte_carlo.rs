use kocl_core::classification::{argmax, mc_class_probs, LogitMoments, NoiseDraws};
use nalgebra::{dvector, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.iter().map(|v| v / sum).collect()
}

/// Per-sample softmax values `softmax(μ + s ε_i)`, one row per draw.
fn per_sample(m: &LogitMoments, noise: &NoiseDraws) -> Vec<Vec<f64>> {
    let s = m.s2.sqrt();
    noise
        .as_matrix()
        .row_iter()
        .map(|row| {
            let z: Vec<f64> = (0..m.classes()).map(|j| m.mu[j] + s * row[j]).collect();
            softmax(&z)
        })
        .collect()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn zero_mean_logits_give_uniform_probabilities() {
    let k = 4;
    let m = LogitMoments {
        mu: DVector::zeros(k),
        s2: 2.0,
    };
    let noise = NoiseDraws::generate(2024, 0, 10_000, k);
    let p = mc_class_probs(&m, 1.0, &noise);
    let samples = per_sample(&m, &noise);
    for j in 0..k {
        let col: Vec<f64> = samples.iter().map(|r| r[j]).collect();
        let (_, se) = mean_and_se(&col);
        assert!((p[j] - 0.25).abs() < 3.0 * se, "class {j}: {} vs 0.25 (se {se})", p[j]);
    }
}

#[test]
fn two_class_estimate_matches_brute_force() {
    let m = LogitMoments {
        mu: dvector![1.0, 0.0],
        s2: 1.0,
    };
    let noise = NoiseDraws::generate(9, 0, 20_000, 2);
    let p = mc_class_probs(&m, 1.0, &noise)[0];
    let col: Vec<f64> = per_sample(&m, &noise).iter().map(|r| r[0]).collect();
    let (_, se_est) = mean_and_se(&col);

    let mut rng = rand::rngs::StdRng::seed_from_u64(77);
    let brute: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            1.0 / (1.0 + (-(1.0 + a - b)).exp())
        })
        .collect();
    let (reference, se_ref) = mean_and_se(&brute);
    let combined = (se_est * se_est + se_ref * se_ref).sqrt();
    assert!(
        (p - reference).abs() < 3.0 * combined,
        "{p} vs {reference} (se {combined})"
    );

    // E[σ(1 + √2 Z)] by trapezoid quadrature over the normal density
    let h = 1e-3;
    let exact: f64 = (-8000..=8000)
        .map(|i| {
            let z = i as f64 * h;
            let w = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            w * h / (1.0 + (-(1.0 + 2f64.sqrt() * z)).exp())
        })
        .sum();
    assert!((reference - exact).abs() < 3.0 * se_ref, "{reference} vs {exact}");
}

#[test]
fn unit_calibration_is_the_uncalibrated_estimator() {
    let m = LogitMoments {
        mu: dvector![0.3, -1.2, 2.0, 0.0, 0.7],
        s2: 0.8,
    };
    let noise = NoiseDraws::generate(5, 17, 64, 5);
    let p = mc_class_probs(&m, 1.0, &noise);

    let s = m.s2.sqrt();
    let mut acc = [0.0; 5];
    for row in noise.as_matrix().row_iter() {
        let mut z: Vec<f64> = (0..5).map(|j| m.mu[j] + s * row[j]).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for (a, v) in acc.iter_mut().zip(&z) {
            *a += v / sum;
        }
    }
    let reference: Vec<f64> = acc.iter().map(|a| a / 64.0).collect();
    assert_eq!(p.as_slice(), reference.as_slice());
}

#[test]
fn noiseless_logits_give_the_exact_softmax() {
    let m = LogitMoments {
        mu: dvector![0.5, 1.5, -0.5],
        s2: 0.0,
    };
    let noise = NoiseDraws::generate(1, 1, 32, 3);
    for alpha in [0.1, 1.0, 4.0] {
        let p = mc_class_probs(&m, alpha, &noise);
        let z: Vec<f64> = m.mu.iter().map(|v| alpha * v).collect();
        let exact = softmax(&z);
        for j in 0..3 {
            assert!((p[j] - exact[j]).abs() < 1e-15);
        }
        assert_eq!(argmax(&p), 1);
    }
}

#[test]
fn sharper_calibration_concentrates_mass() {
    let m = LogitMoments {
        mu: dvector![1.0, 0.0, 0.0],
        s2: 0.1,
    };
    let noise = NoiseDraws::generate(8, 0, 256, 3);
    let soft = mc_class_probs(&m, 0.5, &noise)[0];
    let sharp = mc_class_probs(&m, 5.0, &noise)[0];
    assert!(sharp > soft);
}
