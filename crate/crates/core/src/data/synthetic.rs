//! Gaussian class-cluster streams, optionally split into tasks that each
//! expose a subset of the classes.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub classes: Vec<usize>,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClassSpec {
    pub classes: usize,
    pub dim: usize,
    pub tasks: Vec<TaskSpec>,
    /// Per-coordinate standard deviation of the class centres.
    pub center_scale: f64,
    /// Per-coordinate standard deviation of the observation noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticClassSpec {
    /// `num_tasks` consecutive tasks over disjoint blocks of
    /// `classes_per_task` classes, `points_per_task` points each.
    pub fn split(num_tasks: usize, classes_per_task: usize, points_per_task: usize, dim: usize, seed: u64) -> Self {
        let tasks = (0..num_tasks)
            .map(|t| TaskSpec {
                classes: (t * classes_per_task..(t + 1) * classes_per_task).collect(),
                duration: points_per_task,
            })
            .collect();
        SyntheticClassSpec {
            classes: num_tasks * classes_per_task,
            dim,
            tasks,
            center_scale: 1.0,
            noise_scale: 0.5,
            seed,
        }
    }

    /// A single task containing every class.
    pub fn stationary(classes: usize, points: usize, dim: usize, seed: u64) -> Self {
        SyntheticClassSpec {
            classes,
            dim,
            tasks: vec![TaskSpec {
                classes: (0..classes).collect(),
                duration: points,
            }],
            center_scale: 1.0,
            noise_scale: 1.0,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.iter().map(|t| t.duration).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stream positions where a new task starts (excluding position 0).
    pub fn task_boundaries(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .scan(0, |pos, t| {
                *pos += t.duration;
                Some(*pos)
            })
            .take(self.tasks.len().saturating_sub(1))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim == 0 {
            return Err(Error::config("classes and dim must be positive"));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("at least one task is required"));
        }
        let mut covered = vec![false; self.classes];
        for (i, t) in self.tasks.iter().enumerate() {
            if t.duration == 0 || t.classes.is_empty() {
                return Err(Error::config(format!(
                    "task {i} must have classes and a positive duration"
                )));
            }
            for &c in &t.classes {
                if c >= self.classes {
                    return Err(Error::config(format!("task {i} names class {c} >= {}", self.classes)));
                }
                covered[c] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::config("tasks must cover every class"));
        }
        for (name, v) in [("center_scale", self.center_scale), ("noise_scale", self.noise_scale)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub features: DVector<f64>,
    pub label: usize,
}

/// Fixed random class centres plus isotropic noise; within a task the class
/// is drawn uniformly from that task's classes.
pub fn gen_class_stream(spec: &SyntheticClassSpec) -> Result<Vec<LabeledPoint>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<DVector<f64>> = (0..spec.classes)
        .map(|_| {
            DVector::from_fn(spec.dim, |_, _| {
                spec.center_scale * rng.sample::<f64, _>(StandardNormal)
            })
        })
        .collect();
    let mut out = Vec::with_capacity(spec.len());
    for task in &spec.tasks {
        for _ in 0..task.duration {
            let label = task.classes[rng.random_range(0..task.classes.len())];
            let features = DVector::from_fn(spec.dim, |i, _| {
                centers[label][i] + spec.noise_scale * rng.sample::<f64, _>(StandardNormal)
            });
            out.push(LabeledPoint { features, label });
        }
    }
    Ok(out)
}
