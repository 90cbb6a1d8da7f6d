//! Online continual learning with Kalman-filtered linear readouts.
//!
//! A Bayesian posterior over linear predictor weights is tracked with
//! Kalman recursions under a variance-preserving parameter-drift prior whose
//! forgetting coefficient `γ = exp(-δ/2)` is learned online by SGD. The
//! regression learner uses the exact Gaussian predictive density; the
//! classifier runs the recursion on one-hot targets with a shared covariance
//! and scores with a calibrated Monte-Carlo softmax.
//!
//! Streams are evaluated prequentially: each point is scored before it is
//! used for training.

pub mod classification;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod filter;
pub mod oracle;
pub mod regression;
pub mod runner;
pub mod selfcheck;

pub use classification::{ClassStep, ClassifierConfig, ClassifierFilter, Learning, LogitMoments, NoiseDraws};
pub use error::{Error, Result};
pub use filter::{Hyperparams, MeanState, MeanTransition, Posterior, PsdMatrix};
pub use regression::{GaussianPrediction, RegressionConfig, RegressionFilter};
pub use runner::{OnlineMetrics, RunConfig, StreamChunk, StreamRunner, TransitionMode};
