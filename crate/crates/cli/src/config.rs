//! Fully resolved experiment configurations. Flags are turned into one of
//! these before anything runs; the resolved value is what gets embedded in
//! the output header, so feeding it back through `--config` repeats the run.

use std::path::{Path, PathBuf};

use kocl_core::data::{PiecewiseSeriesSpec, SyntheticClassSpec};
use kocl_core::{ClassifierConfig, RegressionConfig, RunConfig};
use serde::{Deserialize, Serialize};

use crate::error::Failure;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { spec: SyntheticClassSpec },
    FeatureFile { path: PathBuf },
    Csv { path: PathBuf },
}

impl DataSource {
    /// Parses a `--data` value. Synthetic streams take their seed from `seed`.
    pub fn parse(value: &str, seed: u64) -> Result<Self, Failure> {
        match value {
            "synthetic:split" => Ok(DataSource::Synthetic {
                spec: SyntheticClassSpec::split(10, 10, 500, 32, seed),
            }),
            "synthetic:stationary" => Ok(DataSource::Synthetic {
                spec: SyntheticClassSpec::stationary(10, 2000, 32, seed),
            }),
            other if other.starts_with("synthetic:") => Err(Failure::Config(format!(
                "unknown synthetic stream {other:?} (expected synthetic:split or synthetic:stationary)"
            ))),
            other => {
                let path = PathBuf::from(other);
                match path.extension().and_then(|e| e.to_str()) {
                    Some("kocl") => Ok(DataSource::FeatureFile { path }),
                    Some("csv") => Ok(DataSource::Csv { path }),
                    _ => Err(Failure::Config(format!(
                        "--data {other:?}: expected synthetic:split, synthetic:stationary, a .kocl or a .csv file"
                    ))),
                }
            }
        }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self, DataSource::Synthetic { .. })
    }

    pub fn default_chunk_size(&self) -> usize {
        if self.is_synthetic() {
            10
        } else {
            128
        }
    }

    /// Applies a new seed to a synthetic stream; files are left alone.
    pub fn reseed(&mut self, seed: u64) {
        if let DataSource::Synthetic { spec } = self {
            spec.seed = seed;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesConfig {
    pub series: PiecewiseSeriesSpec,
    pub seed: u64,
    pub learned: RegressionConfig,
    pub fixed: RegressionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationConfig {
    pub data: DataSource,
    /// L2-normalize every feature vector before it reaches the filter.
    pub normalize: bool,
    pub filter: ClassifierConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRunConfig {
    pub data: DataSource,
    pub normalize: bool,
    pub filter: RegressionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Timeseries(TimeseriesConfig),
    Classification(ClassificationConfig),
    Regression(RegressionRunConfig),
}

impl ExperimentConfig {
    pub fn command(&self) -> &'static str {
        match self {
            ExperimentConfig::Timeseries(_) => "timeseries",
            ExperimentConfig::Classification(_) | ExperimentConfig::Regression(_) => "classify",
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        match self {
            ExperimentConfig::Timeseries(c) => {
                c.series.validate()?;
                c.learned.validate()?;
                c.fixed.validate()?;
            }
            ExperimentConfig::Classification(c) => {
                c.filter.validate()?;
                c.run.validate()?;
                if let DataSource::Synthetic { spec } = &c.data {
                    spec.validate()?;
                }
            }
            ExperimentConfig::Regression(c) => {
                c.filter.validate()?;
                if let DataSource::Synthetic { spec } = &c.data {
                    spec.validate()?;
                }
            }
        }
        Ok(())
    }
}

/// Header record written as the first line of every output.
#[derive(Debug, Serialize, Deserialize)]
pub struct Header {
    pub record: String,
    pub format_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
}

impl Header {
    pub fn new(config: ExperimentConfig) -> Self {
        Header {
            record: "header".into(),
            format_version: FORMAT_VERSION,
            command: config.command().into(),
            config,
        }
    }
}

/// Loads a config from either a bare JSON config or a JSONL output whose
/// first line is a header record.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(_) => {
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            serde_json::from_str(first)
                .map_err(|e| Failure::Config(format!("{}: not a JSON config or output file: {e}", path.display())))?
        }
    };
    let bad = |e: serde_json::Error| Failure::Config(format!("{}: {e}", path.display()));
    let config = if value.get("record").and_then(|r| r.as_str()) == Some("header") {
        let header: Header = serde_json::from_value(value).map_err(bad)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Failure::Config(format!(
                "{}: format version {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                header.format_version
            )));
        }
        header.config
    } else {
        serde_json::from_value(value).map_err(bad)?
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_values() {
        assert!(
            matches!(DataSource::parse("synthetic:split", 3), Ok(DataSource::Synthetic { spec }) if spec.seed == 3)
        );
        assert!(matches!(
            DataSource::parse("x/feats.kocl", 0),
            Ok(DataSource::FeatureFile { .. })
        ));
        assert!(matches!(DataSource::parse("rows.csv", 0), Ok(DataSource::Csv { .. })));
        assert!(matches!(
            DataSource::parse("synthetic:nope", 0),
            Err(Failure::Config(_))
        ));
        assert!(matches!(DataSource::parse("feats.bin", 0), Err(Failure::Config(_))));
    }

    #[test]
    fn chunk_defaults() {
        assert_eq!(
            DataSource::parse("synthetic:split", 0).unwrap().default_chunk_size(),
            10
        );
        assert_eq!(DataSource::parse("a.kocl", 0).unwrap().default_chunk_size(), 128);
    }
}
