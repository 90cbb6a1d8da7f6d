use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant mean with additive Gaussian noise. Step `n` (zero
/// based) belongs to segment `j` once `n >= change_points[j - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSeriesSpec {
    pub segment_means: Vec<f64>,
    pub change_points: Vec<usize>,
    pub noise_var: f64,
    pub length: usize,
}

impl PiecewiseSeriesSpec {
    /// 3058 steps, eight segments, seven change points, noise variance 0.01.
    pub fn seven_change_points() -> Self {
        PiecewiseSeriesSpec {
            segment_means: vec![1.3, 1.0, 1.3, 0.95, 0.6, 0.25, 0.8, 0.5],
            change_points: vec![451, 709, 958, 1547, 2147, 2769, 2957],
            noise_var: 0.01,
            length: 3058,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_means.is_empty() {
            return Err(Error::config("at least one segment is required"));
        }
        if self.change_points.len() + 1 != self.segment_means.len() {
            return Err(Error::config(format!(
                "{} segments need {} change points, got {}",
                self.segment_means.len(),
                self.segment_means.len() - 1,
                self.change_points.len()
            )));
        }
        if self.change_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("change points must be strictly increasing"));
        }
        if let Some(&last) = self.change_points.last() {
            if last >= self.length || self.change_points[0] == 0 {
                return Err(Error::config("change points must lie in (0, length)"));
            }
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::config(format!("noise_var must be >= 0, got {}", self.noise_var)));
        }
        if self.segment_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("segment means must be finite"));
        }
        Ok(())
    }

    /// Segment index of every step.
    pub fn segment_of(&self, n: usize) -> usize {
        self.change_points.partition_point(|&c| c <= n)
    }
}

/// Observations `y_n`; the matching feature is the constant `φ_n = 1`.
pub fn gen_piecewise_series(spec: &PiecewiseSeriesSpec, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = spec.noise_var.sqrt();
    Ok((0..spec.length)
        .map(|n| {
            let mean = spec.segment_means[spec.segment_of(n)];
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_layout() {
        let spec = PiecewiseSeriesSpec::seven_change_points();
        let y = gen_piecewise_series(&spec, 1).unwrap();
        assert_eq!(y.len(), 3058);
        assert_eq!(spec.segment_means.len(), 8);
        assert_eq!(spec.segment_of(0), 0);
        assert_eq!(spec.segment_of(450), 0);
        for (j, &c) in spec.change_points.iter().enumerate() {
            assert_eq!(spec.segment_of(c - 1), j);
            assert_eq!(spec.segment_of(c), j + 1);
        }
    }

    #[test]
    fn noiseless_is_step_function() {
        let spec = PiecewiseSeriesSpec {
            noise_var: 0.0,
            ..PiecewiseSeriesSpec::seven_change_points()
        };
        let y = gen_piecewise_series(&spec, 3).unwrap();
        assert_eq!(y[0], 1.3);
        assert_eq!(y[451], 1.0);
        assert_eq!(y[3057], 0.5);
        assert!(y
            .iter()
            .enumerate()
            .all(|(n, &v)| v == spec.segment_means[spec.segment_of(n)]));
    }

    #[test]
    fn segment_means_are_recovered() {
        let spec = PiecewiseSeriesSpec::seven_change_points();
        let y = gen_piecewise_series(&spec, 2024).unwrap();
        let mut bounds = vec![0];
        bounds.extend(&spec.change_points);
        bounds.push(spec.length);
        for (j, w) in bounds.windows(2).enumerate() {
            let seg = &y[w[0]..w[1]];
            let mean = seg.iter().sum::<f64>() / seg.len() as f64;
            let tol = 4.0 * (spec.noise_var / seg.len() as f64).sqrt();
            assert!((mean - spec.segment_means[j]).abs() < tol, "segment {j}: {mean}");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PiecewiseSeriesSpec::seven_change_points();
        assert_eq!(
            gen_piecewise_series(&spec, 5).unwrap(),
            gen_piecewise_series(&spec, 5).unwrap()
        );
        assert_ne!(
            gen_piecewise_series(&spec, 5).unwrap(),
            gen_piecewise_series(&spec, 6).unwrap()
        );
    }

    #[test]
    fn invalid_specs() {
        let base = PiecewiseSeriesSpec::seven_change_points();
        let mut s = base.clone();
        s.change_points.pop();
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.change_points.swap(0, 1);
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.length = 2957;
        assert!(s.validate().is_err());
        let mut s = base;
        s.noise_var = -1.0;
        assert!(s.validate().is_err());
    }
}
