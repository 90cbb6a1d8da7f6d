//! Stream sources: synthetic generators and the binary feature-file codec.

mod csv_ingest;
mod feature_file;
mod series;
mod synthetic;

use thiserror::Error;

pub use csv_ingest::{read_csv, CsvData};
pub use feature_file::{
    open_feature_file, write_feature_file, FeatureHeader, FeatureReader, FeatureRecord, FeatureWriter, Label,
    LabelKind, FORMAT_VERSION, HEADER_LEN, MAGIC,
};
pub use series::{gen_piecewise_series, PiecewiseSeriesSpec};
pub use synthetic::{gen_class_stream, LabeledPoint, SyntheticClassSpec, TaskSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic {found:?}, expected \"KOCL\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported feature-file version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown label kind {0}")]
    UnknownLabelKind(u8),

    #[error("truncated header: {0} bytes")]
    TruncatedHeader(usize),

    #[error("file truncated inside record {record}")]
    Truncated { record: u64 },

    #[error("file has {actual} bytes, header implies {expected}")]
    LengthMismatch { expected: u64, actual: u64 },

    #[error("feature dimension mismatch: file has {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("class count mismatch: file has {found}, expected {expected}")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("label kind mismatch: file has {found:?}, expected {expected:?}")]
    LabelKindMismatch { expected: LabelKind, found: LabelKind },

    #[error("record {record}: label {label} outside [0, {classes})")]
    LabelOutOfRange { record: u64, label: u64, classes: u32 },

    #[error("record count mismatch: header says {expected}, wrote {written}")]
    RecordCount { expected: u64, written: u64 },

    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
}

impl FeatureRecord {
    /// Features promoted to `f64`.
    pub fn to_vector(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.features.len(), self.features.iter().map(|&v| v as f64))
    }
}

/// Adapts a record stream with class-id labels into labelled points.
pub fn class_points<I>(records: I) -> impl Iterator<Item = crate::Result<LabeledPoint>>
where
    I: IntoIterator<Item = Result<FeatureRecord, DataError>>,
{
    records.into_iter().map(|rec| {
        let rec = rec?;
        match rec.label {
            Label::Class(c) => Ok(LabeledPoint {
                features: rec.to_vector(),
                label: c as usize,
            }),
            Label::Real(_) => Err(DataError::LabelKindMismatch {
                expected: LabelKind::ClassId,
                found: LabelKind::Real,
            }
            .into()),
        }
    })
}

/// Adapts a record stream with real labels into `(φ, y)` pairs.
pub fn regression_points<I>(records: I) -> impl Iterator<Item = crate::Result<(nalgebra::DVector<f64>, f64)>>
where
    I: IntoIterator<Item = Result<FeatureRecord, DataError>>,
{
    records.into_iter().map(|rec| {
        let rec = rec?;
        let y = match rec.label {
            Label::Real(y) => y,
            Label::Class(c) => c as f64,
        };
        Ok((rec.to_vector(), y))
    })
}
