//! Prequential protocol over chunked streams.
//!
//! Every chunk is first scored point by point against the state as it was
//! before the chunk arrived, then used for training. Metrics only ever see
//! the scores from the first phase.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classification::{argmax, floored_log, mc_class_probs, ClassifierFilter};
use crate::data::LabeledPoint;
use crate::error::{check_dim, Error, Result};
use crate::regression::RegressionFilter;

/// Where the parameter-drift transition is applied inside a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionMode {
    /// Before every point of the chunk.
    #[default]
    AlwaysMarkov,
    /// Only before the last point of the chunk.
    LastStepMarkov,
}

/// When the calibration parameter takes its gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSchedule {
    /// Once per chunk on the mean loss of the chunk's up-front scores.
    #[default]
    PerChunk,
    /// At every point of the sequential pass.
    PerPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub sample_size: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            capacity: 100,
            sample_size: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub transition_mode: TransitionMode,
    pub chunk_size: usize,
    pub replay: Option<ReplayConfig>,
    pub learn_delta: bool,
    pub learn_alpha: bool,
    pub alpha_schedule: AlphaSchedule,
    /// Seed of the replay sampler.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            transition_mode: TransitionMode::AlwaysMarkov,
            chunk_size: 10,
            replay: None,
            learn_delta: true,
            learn_alpha: false,
            alpha_schedule: AlphaSchedule::PerChunk,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::config("chunk_size must be at least 1"));
        }
        if let Some(r) = &self.replay {
            if r.capacity == 0 {
                return Err(Error::config("replay capacity must be at least 1"));
            }
            if r.sample_size > r.capacity {
                return Err(Error::config(format!(
                    "replay sample_size {} exceeds capacity {}",
                    r.sample_size, r.capacity
                )));
            }
        }
        Ok(())
    }
}

/// A block of points revealed at one protocol step. The first `fresh`
/// points come from the stream; any further points are replayed.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamChunk {
    pub chunk_index: u64,
    pub features: Vec<DVector<f64>>,
    pub labels: Vec<usize>,
    /// Original stream position of every point.
    pub stream_indices: Vec<u64>,
    pub fresh: usize,
}

impl StreamChunk {
    pub fn new(chunk_index: u64, first_index: u64, points: Vec<LabeledPoint>) -> Self {
        let n = points.len();
        let (features, labels) = points.into_iter().map(|p| (p.features, p.label)).unzip();
        StreamChunk {
            chunk_index,
            features,
            labels,
            stream_indices: (first_index..first_index + n as u64).collect(),
            fresh: n,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn first_index(&self) -> Option<u64> {
        self.stream_indices.first().copied()
    }
}

/// Groups a point stream into chunks of `size` (the last may be shorter).
pub struct Chunker<I> {
    inner: I,
    size: usize,
    next_chunk: u64,
    next_index: u64,
    done: bool,
}

impl<I> Iterator for Chunker<I>
where
    I: Iterator<Item = Result<LabeledPoint>>,
{
    type Item = Result<StreamChunk>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut points = Vec::with_capacity(self.size);
        while points.len() < self.size {
            match self.inner.next() {
                Some(Ok(p)) => points.push(p),
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                None => {
                    self.done = true;
                    break;
                }
            }
        }
        if points.is_empty() {
            return None;
        }
        let n = points.len() as u64;
        let chunk = StreamChunk::new(self.next_chunk, self.next_index, points);
        self.next_chunk += 1;
        self.next_index += n;
        Some(Ok(chunk))
    }
}

pub fn chunk_points<I>(points: I, size: usize) -> Chunker<I::IntoIter>
where
    I: IntoIterator<Item = Result<LabeledPoint>>,
{
    assert!(size > 0, "chunk size must be positive");
    Chunker {
        inner: points.into_iter(),
        size,
        next_chunk: 0,
        next_index: 0,
        done: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ReplayItem {
    stream_index: u64,
    features: DVector<f64>,
    label: usize,
}

/// FIFO memory of the most recently seen stream points.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<ReplayItem>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stream indices currently held, oldest first.
    pub fn stream_indices(&self) -> Vec<u64> {
        self.items.iter().map(|i| i.stream_index).collect()
    }

    pub fn push(&mut self, stream_index: u64, features: DVector<f64>, label: usize) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(ReplayItem {
            stream_index,
            features,
            label,
        });
    }
}

/// Appends up to `sample_size` points drawn uniformly without replacement
/// from `buffer`, then records the chunk's fresh points in the buffer.
pub fn replay_augment(
    chunk: StreamChunk,
    buffer: &mut ReplayBuffer,
    sample_size: usize,
    rng: &mut ChaCha8Rng,
) -> StreamChunk {
    let mut out = chunk;
    out.features.truncate(out.fresh);
    out.labels.truncate(out.fresh);
    out.stream_indices.truncate(out.fresh);

    let replayed: Vec<ReplayItem> = if buffer.is_empty() || sample_size == 0 {
        Vec::new()
    } else {
        let amount = sample_size.min(buffer.len());
        sample(rng, buffer.len(), amount)
            .into_iter()
            .map(|i| buffer.items[i].clone())
            .collect()
    };
    for i in 0..out.fresh {
        buffer.push(out.stream_indices[i], out.features[i].clone(), out.labels[i]);
    }
    for item in replayed {
        out.features.push(item.features);
        out.labels.push(item.label);
        out.stream_indices.push(item.stream_index);
    }
    out
}

/// Per-point record from the scoring phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PointScore {
    pub stream_index: u64,
    pub label: usize,
    pub probs: DVector<f64>,
    pub predicted: usize,
    pub log_predictive: f64,
}

impl PointScore {
    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutcome {
    pub chunk_index: u64,
    /// Scores of the fresh points, in stream order.
    pub scores: Vec<PointScore>,
    /// `γ` after each fresh point's `δ` step.
    pub gammas: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    /// Size of the chunk actually trained on (fresh plus replayed).
    pub trained: usize,
}

fn validate_chunk(filter: &ClassifierFilter, chunk: &StreamChunk) -> Result<()> {
    if chunk.is_empty() {
        return Err(Error::domain("empty chunk"));
    }
    check_dim("chunk labels", chunk.features.len(), chunk.labels.len())?;
    check_dim("chunk indices", chunk.features.len(), chunk.stream_indices.len())?;
    if chunk.fresh > chunk.len() {
        return Err(Error::domain("fresh count exceeds chunk length"));
    }
    for (phi, &label) in chunk.features.iter().zip(&chunk.labels) {
        check_dim("feature vector", filter.dim(), phi.len())?;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("feature vector contains NaN or infinity"));
        }
        if label >= filter.classes() {
            return Err(Error::domain(format!(
                "class {label} outside [0, {})",
                filter.classes()
            )));
        }
    }
    Ok(())
}

/// One protocol step: score every point against the current state, take
/// the per-chunk `α` step, then run the sequential Kalman recursion.
pub fn run_chunk(filter: &mut ClassifierFilter, chunk: &StreamChunk, cfg: &RunConfig) -> Result<ChunkOutcome> {
    validate_chunk(filter, chunk)?;
    let base = filter.step_index();
    let n = chunk.len();

    let mut scores = Vec::with_capacity(chunk.fresh);
    let mut alpha_grad = 0.0;
    let per_chunk_alpha = cfg.learn_alpha && cfg.alpha_schedule == AlphaSchedule::PerChunk;
    for i in 0..n {
        let noise = filter.noise_for(base + i as u64);
        let phi = &chunk.features[i];
        let label = chunk.labels[i];
        if i < chunk.fresh {
            let moments = filter.logit_moments(phi)?;
            let probs = mc_class_probs(&moments, filter.alpha(), &noise);
            scores.push(PointScore {
                stream_index: chunk.stream_indices[i],
                label,
                predicted: argmax(&probs),
                log_predictive: floored_log(probs[label]),
                probs,
            });
        }
        if per_chunk_alpha {
            alpha_grad += filter.log_prob_with_grads(phi, label, &noise)?.d_alpha;
        }
    }
    if per_chunk_alpha {
        filter.step_alpha(alpha_grad / n as f64)?;
    }

    let per_point_alpha = cfg.learn_alpha && cfg.alpha_schedule == AlphaSchedule::PerPoint;
    let mut gammas = Vec::with_capacity(chunk.fresh);
    for i in 0..n {
        let phi = &chunk.features[i];
        let label = chunk.labels[i];
        if cfg.learn_delta || per_point_alpha {
            let noise = filter.noise_for(base + i as u64);
            let g = filter.log_prob_with_grads(phi, label, &noise)?;
            if cfg.learn_delta {
                filter.step_delta(g.d_t)?;
            }
            if per_point_alpha {
                filter.step_alpha(g.d_alpha)?;
            }
        }
        let transition = match cfg.transition_mode {
            TransitionMode::AlwaysMarkov => true,
            TransitionMode::LastStepMarkov => i + 1 == n,
        };
        filter.kalman_step(phi, label, transition)?;
        if i < chunk.fresh {
            gammas.push(filter.gamma());
        }
    }

    Ok(ChunkOutcome {
        chunk_index: chunk.chunk_index,
        scores,
        gammas,
        gamma: filter.gamma(),
        delta: filter.delta(),
        alpha: filter.alpha(),
        trained: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_index: u64,
    pub n_seen: u64,
    /// Average online accuracy after this chunk.
    pub accuracy: f64,
    pub chunk_accuracy: f64,
    /// Sum of this chunk's log scores (nats).
    pub chunk_log_predictive: f64,
    pub cumulative_log_predictive: f64,
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
}

/// Running prequential metrics over the stream points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OnlineMetrics {
    pub n_seen: u64,
    pub n_correct: u64,
    pub cumulative_log_predictive: f64,
    /// Correctness flag of every stream point, in stream order.
    pub correct: Vec<bool>,
    /// Log score of every stream point, in stream order.
    pub scores: Vec<f64>,
    /// `γ` after every stream point's `δ` step.
    pub gamma_trace: Vec<f64>,
    pub history: Vec<ChunkRecord>,
}

impl OnlineMetrics {
    pub fn running_accuracy(&self) -> f64 {
        if self.n_seen == 0 {
            0.0
        } else {
            self.n_correct as f64 / self.n_seen as f64
        }
    }

    pub fn average_log_predictive(&self) -> f64 {
        if self.n_seen == 0 {
            0.0
        } else {
            self.cumulative_log_predictive / self.n_seen as f64
        }
    }

    /// Average online accuracy recomputed from the stored flags.
    pub fn accuracy_from_flags(&self) -> f64 {
        if self.correct.is_empty() {
            return 0.0;
        }
        let hits = self.correct.iter().filter(|&&c| c).count();
        hits as f64 / self.correct.len() as f64
    }

    pub fn absorb(&mut self, outcome: &ChunkOutcome) -> &ChunkRecord {
        let mut chunk_lp = 0.0;
        let mut chunk_correct = 0u64;
        for s in &outcome.scores {
            let ok = s.correct();
            self.correct.push(ok);
            self.scores.push(s.log_predictive);
            chunk_lp += s.log_predictive;
            chunk_correct += ok as u64;
        }
        self.gamma_trace.extend(&outcome.gammas);
        self.n_seen += outcome.scores.len() as u64;
        self.n_correct += chunk_correct;
        self.cumulative_log_predictive += chunk_lp;
        let fresh = outcome.scores.len().max(1) as f64;
        self.history.push(ChunkRecord {
            chunk_index: outcome.chunk_index,
            n_seen: self.n_seen,
            accuracy: self.running_accuracy(),
            chunk_accuracy: chunk_correct as f64 / fresh,
            chunk_log_predictive: chunk_lp,
            cumulative_log_predictive: self.cumulative_log_predictive,
            gamma: outcome.gamma,
            delta: outcome.delta,
            alpha: outcome.alpha,
        });
        self.history.last().unwrap()
    }
}

/// Filter, protocol configuration, replay memory and metrics of one run.
#[derive(Debug, Clone)]
pub struct StreamRunner {
    filter: ClassifierFilter,
    cfg: RunConfig,
    buffer: Option<ReplayBuffer>,
    replay_rng: ChaCha8Rng,
    metrics: OnlineMetrics,
}

/// Stream offset for the replay sampler so it never shares draws with the
/// Monte-Carlo noise streams.
const REPLAY_STREAM: u64 = u64::MAX;

impl StreamRunner {
    pub fn new(filter: ClassifierFilter, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut replay_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        replay_rng.set_stream(REPLAY_STREAM);
        Ok(StreamRunner {
            buffer: cfg.replay.map(|r| ReplayBuffer::new(r.capacity)),
            filter,
            cfg,
            replay_rng,
            metrics: OnlineMetrics::default(),
        })
    }

    pub fn filter(&self) -> &ClassifierFilter {
        &self.filter
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn metrics(&self) -> &OnlineMetrics {
        &self.metrics
    }

    pub fn replay_buffer(&self) -> Option<&ReplayBuffer> {
        self.buffer.as_ref()
    }

    pub fn into_parts(self) -> (ClassifierFilter, OnlineMetrics) {
        (self.filter, self.metrics)
    }

    /// Augments the chunk with replay (if configured), trains on it and
    /// folds the fresh points' scores into the metrics.
    pub fn step(&mut self, chunk: StreamChunk) -> Result<ChunkOutcome> {
        validate_chunk(&self.filter, &chunk)?;
        let chunk = match (&mut self.buffer, self.cfg.replay) {
            (Some(buffer), Some(r)) => replay_augment(chunk, buffer, r.sample_size, &mut self.replay_rng),
            _ => chunk,
        };
        let outcome = run_chunk(&mut self.filter, &chunk, &self.cfg)?;
        let rec = self.metrics.absorb(&outcome);
        log::debug!(
            "chunk {} acc={:.4} lp={:.4} gamma={:.6} alpha={:.4}",
            rec.chunk_index,
            rec.accuracy,
            rec.cumulative_log_predictive,
            rec.gamma,
            rec.alpha
        );
        Ok(outcome)
    }

    /// Runs every chunk; on error the metrics gathered so far stay available.
    pub fn run_stream<I>(&mut self, chunks: I) -> Result<()>
    where
        I: IntoIterator<Item = Result<StreamChunk>>,
    {
        for chunk in chunks {
            self.step(chunk?)?;
        }
        Ok(())
    }
}

/// Metrics of a complete run plus the error that stopped it, if any.
#[derive(Debug)]
pub struct StreamOutcome {
    pub filter: ClassifierFilter,
    pub metrics: OnlineMetrics,
    pub error: Option<Error>,
}

pub fn run_stream<I>(filter: ClassifierFilter, chunks: I, cfg: &RunConfig) -> Result<StreamOutcome>
where
    I: IntoIterator<Item = Result<StreamChunk>>,
{
    let mut runner = StreamRunner::new(filter, cfg.clone())?;
    let error = runner.run_stream(chunks).err();
    let (filter, metrics) = runner.into_parts();
    Ok(StreamOutcome { filter, metrics, error })
}

/// One row of a regression trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionRecord {
    pub n: u64,
    pub y: f64,
    pub pred_mean: f64,
    pub pred_std: f64,
    /// `γ²` applied by this step's transition.
    pub gamma2: f64,
    pub log_predictive: f64,
    /// `1/n Σ_{i≤n} log p(y_i | y_{1:i-1})`.
    pub avg_log_predictive: f64,
}

/// Per-point prequential run of a regression filter.
pub fn run_regression_stream<I>(filter: &mut RegressionFilter, points: I) -> Result<Vec<RegressionRecord>>
where
    I: IntoIterator<Item = (DVector<f64>, f64)>,
{
    let mut out = Vec::new();
    let mut total = 0.0;
    for (i, (phi, y)) in points.into_iter().enumerate() {
        let step = filter.observe(&phi, y)?;
        total += step.log_predictive;
        let n = i as u64 + 1;
        out.push(RegressionRecord {
            n,
            y,
            pred_mean: step.prediction.mean,
            pred_std: step.prediction.std_dev(),
            gamma2: step.gamma * step.gamma,
            log_predictive: step.log_predictive,
            avg_log_predictive: total / n as f64,
        });
    }
    Ok(out)
}
