//! Opens a [`DataSource`] as a lazy point stream. Feature files are read
//! record by record; only synthetic streams and CSV input live in memory.

use std::fs::File;

use kocl_core::data::{
    class_points, gen_class_stream, open_feature_file, read_csv, regression_points, DataError, LabelKind, LabeledPoint,
};
use kocl_core::Result;
use nalgebra::DVector;

use crate::config::DataSource;
use crate::error::Failure;

pub type Points<T> = Box<dyn Iterator<Item = Result<T>>>;

pub struct Stream<T> {
    pub dim: usize,
    /// Class count from the source; 1 for real-valued targets.
    pub classes: usize,
    pub points: Points<T>,
}

fn normalized(mut phi: DVector<f64>) -> DVector<f64> {
    let norm = phi.norm();
    if norm > 0.0 {
        phi /= norm;
    }
    phi
}

fn csv_label(line: u64, value: f64, classes: usize) -> Result<usize> {
    if value.fract() != 0.0 || value < 0.0 || value >= classes as f64 {
        return Err(DataError::Csv {
            line,
            message: format!("label {value} is not a class id in [0, {classes})"),
        }
        .into());
    }
    Ok(value as usize)
}

pub fn open_classes(source: &DataSource, normalize: bool) -> std::result::Result<Stream<LabeledPoint>, Failure> {
    let (dim, classes, points): (usize, usize, Points<LabeledPoint>) = match source {
        DataSource::Synthetic { spec } => {
            let pts = gen_class_stream(spec)?;
            (spec.dim, spec.classes, Box::new(pts.into_iter().map(Ok)))
        }
        DataSource::FeatureFile { path } => {
            let reader = open_feature_file(path)?;
            let h = *reader.header();
            if h.label_kind != LabelKind::ClassId {
                return Err(DataError::LabelKindMismatch {
                    expected: LabelKind::ClassId,
                    found: h.label_kind,
                }
                .into());
            }
            (h.dim as usize, h.classes as usize, Box::new(class_points(reader)))
        }
        DataSource::Csv { path } => {
            let data = read_csv(File::open(path).map_err(DataError::from)?)?;
            let classes = data.classes;
            let pts = data.rows.into_iter().enumerate().map(move |(i, (x, y))| {
                Ok(LabeledPoint {
                    features: DVector::from_vec(x),
                    label: csv_label(i as u64 + 2, y, classes)?,
                })
            });
            (data.dim, classes, Box::new(pts))
        }
    };
    let points: Points<LabeledPoint> = if normalize {
        Box::new(points.map(|p| {
            p.map(|mut p| {
                p.features = normalized(p.features);
                p
            })
        }))
    } else {
        points
    };
    Ok(Stream { dim, classes, points })
}

pub fn open_targets(source: &DataSource, normalize: bool) -> std::result::Result<Stream<(DVector<f64>, f64)>, Failure> {
    let (dim, points): (usize, Points<(DVector<f64>, f64)>) = match source {
        DataSource::Synthetic { spec } => {
            let pts = gen_class_stream(spec)?;
            (
                spec.dim,
                Box::new(pts.into_iter().map(|p| Ok((p.features, p.label as f64)))),
            )
        }
        DataSource::FeatureFile { path } => {
            let reader = open_feature_file(path)?;
            (reader.header().dim as usize, Box::new(regression_points(reader)))
        }
        DataSource::Csv { path } => {
            let data = read_csv(File::open(path).map_err(DataError::from)?)?;
            let rows = data.rows.into_iter().map(|(x, y)| Ok((DVector::from_vec(x), y)));
            (data.dim, Box::new(rows))
        }
    };
    let points: Points<(DVector<f64>, f64)> = if normalize {
        Box::new(points.map(|p| p.map(|(x, y)| (normalized(x), y))))
    } else {
        points
    };
    Ok(Stream {
        dim,
        classes: 1,
        points,
    })
}
