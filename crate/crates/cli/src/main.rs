//! `kocl`: run the online learner on synthetic streams or feature files and
//! write line-delimited JSON traces.

mod commands;
mod config;
mod error;
mod source;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use kocl_core::data::PiecewiseSeriesSpec;
use kocl_core::filter::delta_from_gamma;
use kocl_core::runner::{AlphaSchedule, ReplayConfig};
use kocl_core::selfcheck::{Fault, SelfcheckOptions};
use kocl_core::{ClassifierConfig, Hyperparams, MeanTransition, RegressionConfig, RunConfig, TransitionMode};

use crate::commands::{run_experiment, selfcheck, Jsonl};
use crate::config::{
    load_config, ClassificationConfig, DataSource, ExperimentConfig, RegressionRunConfig, TimeseriesConfig,
};
use crate::error::Failure;

#[derive(Parser)]
#[command(name = "kocl", version, about = "Kalman-filter online continual learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learned-γ vs fixed-γ tracking of a piecewise-constant series.
    Timeseries(TimeseriesArgs),
    /// Prequential run over a labelled stream.
    Classify(ClassifyArgs),
    /// Oracle-equivalence, gradient and covariance checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    #[value(alias = "true")]
    On,
    #[value(alias = "false")]
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Classification,
    Regression,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Transition {
    Always,
    Last,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InjectFault {
    Asymmetry,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file (JSONL); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-run from a config file or the header of an earlier output. No
    /// other run flags may be combined with it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run once per seed in parallel; outputs go to `<out>-seed<N>.<ext>`.
    #[arg(long, value_delimiter = ',', requires = "out")]
    sweep_seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct TimeseriesArgs {
    #[arg(long, default_value_t = 0.05)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.01)]
    sigmaw2: f64,
    #[arg(long, default_value_t = 1.0)]
    delta_lr: f64,
    /// Initial γ of the learned variant.
    #[arg(long, default_value_t = 1.0)]
    gamma_init: f64,
    /// γ of the fixed variant.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long, value_enum, default_value_t = Mode::Classification)]
    mode: Mode,
    /// synthetic:split, synthetic:stationary, a .kocl feature file or a .csv file.
    #[arg(long, default_value = "synthetic:split")]
    data: String,
    /// Points per chunk [default: 10 for synthetic streams, 128 for files].
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Fix γ at this value (turns γ learning off).
    #[arg(long)]
    gamma: Option<f64>,
    /// Learn γ online [default: on].
    #[arg(long, value_enum)]
    learn_gamma: Option<Switch>,
    #[arg(long, default_value_t = 1.0)]
    gamma_init: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_init: f64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    learn_alpha: Switch,
    /// Step α at every point instead of once per chunk.
    #[arg(long)]
    alpha_per_point: bool,
    #[arg(long, default_value_t = 32)]
    mc_samples: usize,
    #[arg(long, value_enum, default_value_t = Transition::Always)]
    transition: Transition,
    /// Replay buffer size; either replay flag turns replay on [default: 100].
    #[arg(long)]
    replay_capacity: Option<usize>,
    /// Replayed points added to each chunk [default: 10].
    #[arg(long)]
    replay_sample: Option<usize>,
    /// Observation noise σ² [default: 1/K, 1 in regression mode].
    #[arg(long)]
    sigma2: Option<f64>,
    /// Prior weight variance σ_w² [default: 1/m].
    #[arg(long)]
    sigmaw2: Option<f64>,
    /// Step size for δ [default: 0.01, 1.0 in regression mode].
    #[arg(long)]
    delta_lr: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    alpha_lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// L2-normalize features.
    #[arg(long)]
    normalize: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<InjectFault>,
}

fn gamma_to_delta(flag: &str, gamma: f64) -> Result<f64, Failure> {
    delta_from_gamma(gamma).map_err(|_| Failure::Config(format!("{flag} must lie in (0, 1], got {gamma}")))
}

impl TimeseriesArgs {
    fn resolve(&self, seed: u64) -> Result<ExperimentConfig, Failure> {
        let hp = Hyperparams::new(self.sigma2, self.sigmaw2)?;
        let mut learned = RegressionConfig::new(hp);
        learned.delta_init = gamma_to_delta("--gamma-init", self.gamma_init)?;
        learned.delta_lr = self.delta_lr;
        learned.mean_transition = MeanTransition::NonShrinking;
        let fixed = RegressionConfig {
            delta_init: gamma_to_delta("--gamma", self.gamma)?,
            learn_delta: false,
            ..learned
        };
        Ok(ExperimentConfig::Timeseries(TimeseriesConfig {
            series: PiecewiseSeriesSpec::seven_change_points(),
            seed,
            learned,
            fixed,
        }))
    }
}

impl ClassifyArgs {
    fn learn_delta(&self) -> Result<bool, Failure> {
        match (self.gamma, self.learn_gamma) {
            (Some(_), Some(Switch::On)) => Err(Failure::Config(
                "--gamma fixes γ; it cannot be combined with --learn-gamma on".into(),
            )),
            (Some(_), _) => Ok(false),
            (None, s) => Ok(s != Some(Switch::Off)),
        }
    }

    fn resolve(&self, seed: u64) -> Result<ExperimentConfig, Failure> {
        let data = DataSource::parse(&self.data, seed)?;
        let learn_delta = self.learn_delta()?;
        let delta_init = match self.gamma {
            Some(g) => gamma_to_delta("--gamma", g)?,
            None => gamma_to_delta("--gamma-init", self.gamma_init)?,
        };
        let chunk_size = self.chunk_size.unwrap_or_else(|| data.default_chunk_size());
        // peek at the source for m and K so the defaults can be filled in
        let (dim, classes) = match self.mode {
            Mode::Classification => {
                let s = source::open_classes(&data, false)?;
                (s.dim, s.classes)
            }
            Mode::Regression => (source::open_targets(&data, false)?.dim, 1),
        };
        let defaults = Hyperparams::defaults_for(dim, classes)?;
        let hp = Hyperparams::new(
            self.sigma2.unwrap_or(defaults.sigma2),
            self.sigmaw2.unwrap_or(defaults.sigmaw2),
        )?;

        match self.mode {
            Mode::Classification => {
                let mut filter = ClassifierConfig::new(hp);
                filter.delta_init = delta_init;
                filter.alpha_init = self.alpha_init;
                filter.delta_lr = self.delta_lr.unwrap_or(filter.delta_lr);
                filter.alpha_lr = self.alpha_lr;
                filter.mc_samples = self.mc_samples;
                filter.seed = seed;
                let replay = match (self.replay_capacity, self.replay_sample) {
                    (None, None) => None,
                    (c, s) => {
                        let d = ReplayConfig::default();
                        Some(ReplayConfig {
                            capacity: c.unwrap_or(d.capacity),
                            sample_size: s.unwrap_or(d.sample_size),
                        })
                    }
                };
                let run = RunConfig {
                    transition_mode: match self.transition {
                        Transition::Always => TransitionMode::AlwaysMarkov,
                        Transition::Last => TransitionMode::LastStepMarkov,
                    },
                    chunk_size,
                    replay,
                    learn_delta,
                    learn_alpha: self.learn_alpha == Switch::On,
                    alpha_schedule: if self.alpha_per_point {
                        AlphaSchedule::PerPoint
                    } else {
                        AlphaSchedule::PerChunk
                    },
                    seed,
                };
                Ok(ExperimentConfig::Classification(ClassificationConfig {
                    data,
                    normalize: self.normalize,
                    filter,
                    run,
                }))
            }
            Mode::Regression => {
                let mut filter = RegressionConfig::new(hp);
                filter.delta_init = delta_init;
                filter.delta_lr = self.delta_lr.unwrap_or(filter.delta_lr);
                filter.learn_delta = learn_delta;
                Ok(ExperimentConfig::Regression(RegressionRunConfig {
                    data,
                    normalize: self.normalize,
                    filter,
                }))
            }
        }
    }
}

/// Flags given on the command line other than the ones allowed next to `--config`.
fn explicit_run_flags(command: &str, matches: &ArgMatches) -> Vec<String> {
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(command).expect("known subcommand");
    sub.get_arguments()
        .filter_map(|a| a.get_long())
        .filter(|long| !matches!(*long, "config" | "out"))
        .filter(|long| matches.value_source(&long.replace('-', "_")) == Some(ValueSource::CommandLine))
        .map(|long| format!("--{long}"))
        .collect()
}

fn reseed(config: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = config.clone();
    match &mut c {
        ExperimentConfig::Timeseries(t) => t.seed = seed,
        ExperimentConfig::Classification(k) => {
            k.data.reseed(seed);
            k.filter.seed = seed;
            k.run.seed = seed;
        }
        ExperimentConfig::Regression(r) => r.data.reseed(seed),
    }
    c
}

fn seeded_path(out: &Path, seed: u64) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-seed{seed}.{ext}"),
        None => format!("{stem}-seed{seed}"),
    };
    out.with_file_name(name)
}

fn write_run(config: &ExperimentConfig, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Failure::Config(format!("cannot create output {}: {e}", path.display())))?;
            run_experiment(config, &mut Jsonl::new(BufWriter::new(file)))
        }
        None => run_experiment(config, &mut Jsonl::new(BufWriter::new(std::io::stdout().lock()))),
    }
}

fn run_configured(
    matches: &ArgMatches,
    output: &OutputArgs,
    command: &str,
    resolve: impl Fn(u64) -> Result<ExperimentConfig, Failure> + Sync,
    seed: u64,
) -> Result<(), Failure> {
    let base = match &output.config {
        Some(path) => {
            let flags = explicit_run_flags(command, matches);
            if !flags.is_empty() {
                return Err(Failure::Config(format!(
                    "--config replaces the run flags; remove {}",
                    flags.join(", ")
                )));
            }
            let config = load_config(path)?;
            if config.command() != command {
                return Err(Failure::Config(format!(
                    "{} holds a `{}` config, not `{command}`",
                    path.display(),
                    config.command()
                )));
            }
            config
        }
        None => resolve(seed)?,
    };
    log::info!("config: {}", serde_json::to_string(&base).unwrap_or_default());

    let Some(seeds) = &output.sweep_seeds else {
        return write_run(&base, output.out.as_deref());
    };
    let out = output.out.as_deref().expect("clap requires --out with --sweep-seeds");
    let runs: Vec<(u64, ExperimentConfig)> = seeds
        .iter()
        .map(|&s| {
            Ok((
                s,
                if output.config.is_some() {
                    reseed(&base, s)
                } else {
                    resolve(s)?
                },
            ))
        })
        .collect::<Result<_, Failure>>()?;
    let results: Vec<Result<(), Failure>> = std::thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(s, cfg)| {
                let path = seeded_path(out, *s);
                scope.spawn(move || write_run(cfg, Some(&path)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep run panicked"))
            .collect()
    });
    // report the first failure; every run has finished by now
    results.into_iter().find(|r| r.is_err()).unwrap_or(Ok(()))
}

fn run() -> Result<(), Failure> {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::Timeseries(args) => run_configured(sub, &args.output, "timeseries", |s| args.resolve(s), args.seed),
        Command::Classify(args) => run_configured(sub, &args.output, "classify", |s| args.resolve(s), args.seed),
        Command::Selfcheck(args) => {
            let opts = SelfcheckOptions {
                seed: args.seed,
                fault: args
                    .inject_fault
                    .map(|InjectFault::Asymmetry| Fault::CovarianceAsymmetry),
            };
            selfcheck(&opts, &mut std::io::stdout().lock())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KOCL_LOG", "warn")).init();
    if let Err(e) = run() {
        let _ = std::io::stdout().flush();
        eprintln!("kocl: {e}");
        std::process::exit(e.exit_code());
    }
}
