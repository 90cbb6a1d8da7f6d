//! Small text ingest path: a `m,K` header line followed by rows of
//! `f_1,...,f_m,label`.

use std::io::Read;

use super::DataError;

#[derive(Debug, Clone, PartialEq)]
pub struct CsvData {
    pub dim: usize,
    pub classes: usize,
    pub rows: Vec<(Vec<f64>, f64)>,
}

pub fn read_csv<R: Read>(reader: R) -> Result<CsvData, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let err = |line: u64, message: String| DataError::Csv { line, message };

    let head = records
        .next()
        .ok_or_else(|| err(1, "missing `m,K` header".into()))?
        .map_err(|e| err(1, e.to_string()))?;
    if head.len() != 2 {
        return Err(err(1, format!("header must have 2 fields, found {}", head.len())));
    }
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| err(1, format!("{s:?}: {e}")));
    let dim = parse_usize(&head[0])?;
    let classes = parse_usize(&head[1])?;
    if dim == 0 {
        return Err(err(1, "feature dimension must be positive".into()));
    }

    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != dim + 1 {
            return Err(err(line, format!("expected {} fields, found {}", dim + 1, rec.len())));
        }
        let mut values = Vec::with_capacity(dim + 1);
        for field in rec.iter() {
            values.push(field.parse::<f64>().map_err(|e| err(line, format!("{field:?}: {e}")))?);
        }
        let label = values.pop().unwrap();
        if classes > 0 && !(label.fract() == 0.0 && label >= 0.0 && (label as usize) < classes) {
            return Err(err(line, format!("label {label} is not a class id in [0, {classes})")));
        }
        rows.push((values, label));
    }
    Ok(CsvData { dim, classes, rows })
}
