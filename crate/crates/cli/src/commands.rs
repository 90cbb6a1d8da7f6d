use std::io::Write;

use kocl_core::data::gen_piecewise_series;
use kocl_core::runner::{chunk_points, RegressionRecord};
use kocl_core::selfcheck::{run_all, CheckResult, SelfcheckOptions};
use kocl_core::{ClassifierFilter, RegressionFilter, StreamRunner};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{
    ClassificationConfig, ExperimentConfig, Header, RegressionRunConfig, TimeseriesConfig, FORMAT_VERSION,
};
use crate::error::Failure;
use crate::source::{open_classes, open_targets};

#[derive(Serialize)]
struct Tagged<'a, T> {
    record: &'a str,
    #[serde(flatten)]
    body: T,
}

/// Line-delimited JSON output.
pub struct Jsonl<W: Write> {
    out: W,
}

impl<W: Write> Jsonl<W> {
    pub fn new(out: W) -> Self {
        Jsonl { out }
    }

    pub fn write<T: Serialize>(&mut self, record: &str, body: T) -> Result<(), Failure> {
        serde_json::to_writer(&mut self.out, &Tagged { record, body })?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn header(&mut self, config: &ExperimentConfig) -> Result<(), Failure> {
        serde_json::to_writer(&mut self.out, &Header::new(config.clone()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), Failure> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn run_experiment<W: Write>(config: &ExperimentConfig, out: &mut Jsonl<W>) -> Result<(), Failure> {
    config.validate()?;
    out.header(config)?;
    let result = match config {
        ExperimentConfig::Timeseries(c) => timeseries(c, out),
        ExperimentConfig::Classification(c) => classification(c, out),
        ExperimentConfig::Regression(c) => regression(c, out),
    };
    out.flush()?;
    result
}

#[derive(Serialize)]
struct Step<'a> {
    variant: &'a str,
    #[serde(flatten)]
    step: RegressionRecord,
}

#[derive(Serialize)]
struct VariantSummary {
    steps: u64,
    final_avg_log_predictive: f64,
    min_gamma2: f64,
}

impl VariantSummary {
    fn of(trace: &[RegressionRecord]) -> Self {
        VariantSummary {
            steps: trace.len() as u64,
            final_avg_log_predictive: trace.last().map_or(f64::NAN, |r| r.avg_log_predictive),
            min_gamma2: trace.iter().map(|r| r.gamma2).fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Serialize)]
struct TimeseriesSummary {
    learned_gamma: VariantSummary,
    fixed_gamma: VariantSummary,
    learned_beats_fixed: bool,
}

fn regression_trace(ys: &[f64], cfg: &kocl_core::RegressionConfig) -> Result<Vec<RegressionRecord>, Failure> {
    let mut filter = RegressionFilter::new(1, *cfg)?;
    let points = ys.iter().map(|&y| (DVector::from_element(1, 1.0), y));
    Ok(kocl_core::runner::run_regression_stream(&mut filter, points)?)
}

fn timeseries<W: Write>(c: &TimeseriesConfig, out: &mut Jsonl<W>) -> Result<(), Failure> {
    let ys = gen_piecewise_series(&c.series, c.seed)?;
    let learned = regression_trace(&ys, &c.learned)?;
    let fixed = regression_trace(&ys, &c.fixed)?;
    for (variant, trace) in [("learned_gamma", &learned), ("fixed_gamma", &fixed)] {
        for step in trace {
            out.write("step", Step { variant, step: *step })?;
        }
    }
    let learned_gamma = VariantSummary::of(&learned);
    let fixed_gamma = VariantSummary::of(&fixed);
    log::info!(
        "timeseries: learned {:.4} fixed {:.4}",
        learned_gamma.final_avg_log_predictive,
        fixed_gamma.final_avg_log_predictive
    );
    out.write(
        "summary",
        TimeseriesSummary {
            learned_beats_fixed: learned_gamma.final_avg_log_predictive > fixed_gamma.final_avg_log_predictive,
            learned_gamma,
            fixed_gamma,
        },
    )
}

#[derive(Serialize)]
struct ClassifySummary {
    n_seen: u64,
    chunks: u64,
    accuracy: f64,
    cumulative_log_predictive: f64,
    average_log_predictive: f64,
    gamma: f64,
    delta: f64,
    alpha: f64,
    error: Option<String>,
}

fn classification<W: Write>(c: &ClassificationConfig, out: &mut Jsonl<W>) -> Result<(), Failure> {
    let stream = open_classes(&c.data, c.normalize)?;
    let filter = ClassifierFilter::new(stream.dim, stream.classes, c.filter)?;
    let mut runner = StreamRunner::new(filter, c.run.clone())?;
    let mut error = None;
    for chunk in chunk_points(stream.points, c.run.chunk_size) {
        if let Err(e) = chunk.and_then(|ch| runner.step(ch)) {
            error = Some(e);
            break;
        }
        out.write("chunk", runner.metrics().history.last().expect("chunk recorded"))?;
    }
    let m = runner.metrics();
    let f = runner.filter();
    log::info!("classify: {} points, accuracy {:.4}", m.n_seen, m.running_accuracy());
    out.write(
        "summary",
        ClassifySummary {
            n_seen: m.n_seen,
            chunks: m.history.len() as u64,
            accuracy: m.running_accuracy(),
            cumulative_log_predictive: m.cumulative_log_predictive,
            average_log_predictive: m.average_log_predictive(),
            gamma: f.gamma(),
            delta: f.delta(),
            alpha: f.alpha(),
            error: error.as_ref().map(|e| e.to_string()),
        },
    )?;
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct RegressionSummary {
    n_seen: u64,
    average_log_predictive: f64,
    gamma: f64,
    delta: f64,
    error: Option<String>,
}

fn regression<W: Write>(c: &RegressionRunConfig, out: &mut Jsonl<W>) -> Result<(), Failure> {
    let stream = open_targets(&c.data, c.normalize)?;
    let mut filter = RegressionFilter::new(stream.dim, c.filter)?;
    let mut total = 0.0;
    let mut n = 0u64;
    let mut error = None;
    for point in stream.points {
        let (step, y) = match point.and_then(|(phi, y)| Ok((filter.observe(&phi, y)?, y))) {
            Ok(s) => s,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        n += 1;
        total += step.log_predictive;
        let record = RegressionRecord {
            n,
            y,
            pred_mean: step.prediction.mean,
            pred_std: step.prediction.std_dev(),
            gamma2: step.gamma * step.gamma,
            log_predictive: step.log_predictive,
            avg_log_predictive: total / n as f64,
        };
        out.write("step", record)?;
    }
    out.write(
        "summary",
        RegressionSummary {
            n_seen: n,
            average_log_predictive: if n == 0 { f64::NAN } else { total / n as f64 },
            gamma: filter.gamma(),
            delta: filter.delta(),
            error: error.as_ref().map(|e| e.to_string()),
        },
    )?;
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct SelfcheckReport<'a> {
    record: &'a str,
    format_version: u32,
    passed: bool,
    checks: &'a [CheckResult],
}

/// Prints one status line per check, then a JSON summary line.
pub fn selfcheck<W: Write>(opts: &SelfcheckOptions, out: &mut W) -> Result<(), Failure> {
    let checks = run_all(opts)?;
    for c in &checks {
        writeln!(
            out,
            "{} {}: value {:.3e}, threshold {:.3e} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold,
            c.detail
        )?;
    }
    let passed = checks.iter().all(|c| c.passed);
    let report = SelfcheckReport {
        record: "selfcheck",
        format_version: FORMAT_VERSION,
        passed,
        checks: &checks,
    };
    serde_json::to_writer(&mut *out, &report)?;
    writeln!(out)?;
    out.flush()?;
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(Failure::Selfcheck(failed.join(", ")))
    }
}
