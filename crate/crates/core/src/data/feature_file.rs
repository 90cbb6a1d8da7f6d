//! Binary container for precomputed feature vectors.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "KOCL"
//! 4       2     format version (u16, currently 1)
//! 6       4     feature dimension m (u32)
//! 10      4     class count K (u32)
//! 14      8     record count N (u64)
//! 22      1     label kind (u8): 0 = class id (u32), 1 = real (f64)
//! 23      ...   N records of m f32 values followed by the label
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

pub const MAGIC: [u8; 4] = *b"KOCL";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    ClassId,
    Real,
}

impl LabelKind {
    fn code(self) -> u8 {
        match self {
            LabelKind::ClassId => 0,
            LabelKind::Real => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, DataError> {
        match code {
            0 => Ok(LabelKind::ClassId),
            1 => Ok(LabelKind::Real),
            other => Err(DataError::UnknownLabelKind(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            LabelKind::ClassId => 4,
            LabelKind::Real => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Class(u32),
    Real(f64),
}

impl Label {
    pub fn kind(&self) -> LabelKind {
        match self {
            Label::Class(_) => LabelKind::ClassId,
            Label::Real(_) => LabelKind::Real,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHeader {
    pub dim: u32,
    pub classes: u32,
    pub records: u64,
    pub label_kind: LabelKind,
}

impl FeatureHeader {
    pub fn record_len(&self) -> usize {
        4 * self.dim as usize + self.label_kind.width()
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.records * self.record_len() as u64
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[6..10].copy_from_slice(&self.dim.to_le_bytes());
        out[10..14].copy_from_slice(&self.classes.to_le_bytes());
        out[14..22].copy_from_slice(&self.records.to_le_bytes());
        out[22] = self.label_kind.code();
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < HEADER_LEN {
            return Err(DataError::TruncatedHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(DataError::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(DataError::UnsupportedVersion(version));
        }
        Ok(FeatureHeader {
            dim: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
            classes: u32::from_le_bytes(bytes[10..14].try_into().unwrap()),
            records: u64::from_le_bytes(bytes[14..22].try_into().unwrap()),
            label_kind: LabelKind::from_code(bytes[22])?,
        })
    }

    /// Checks the header against what a filter was configured for.
    pub fn check_compatible(&self, dim: usize, classes: Option<usize>, kind: LabelKind) -> Result<(), DataError> {
        if self.dim as usize != dim {
            return Err(DataError::DimensionMismatch {
                expected: dim,
                found: self.dim as usize,
            });
        }
        if let Some(k) = classes {
            if self.classes as usize != k {
                return Err(DataError::ClassCountMismatch {
                    expected: k,
                    found: self.classes as usize,
                });
            }
        }
        if self.label_kind != kind {
            return Err(DataError::LabelKindMismatch {
                expected: kind,
                found: self.label_kind,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub features: Vec<f32>,
    pub label: Label,
}

/// Sequential record reader; holds one record buffer at a time.
pub struct FeatureReader<R> {
    inner: R,
    header: FeatureHeader,
    next: u64,
    buf: Vec<u8>,
    failed: bool,
}

impl<R: Read> FeatureReader<R> {
    pub fn new(mut inner: R) -> Result<Self, DataError> {
        let mut head = [0u8; HEADER_LEN];
        let n = read_fully(&mut inner, &mut head)?;
        if n < HEADER_LEN {
            if n >= 4 && head[0..4] != MAGIC {
                return Err(DataError::BadMagic {
                    found: head[0..4].try_into().unwrap(),
                });
            }
            return Err(DataError::TruncatedHeader(n));
        }
        let header = FeatureHeader::decode(&head)?;
        Ok(FeatureReader {
            inner,
            buf: vec![0u8; header.record_len()],
            header,
            next: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> &FeatureHeader {
        &self.header
    }

    fn read_record(&mut self) -> Result<FeatureRecord, DataError> {
        let n = read_fully(&mut self.inner, &mut self.buf)?;
        if n < self.buf.len() {
            return Err(DataError::Truncated { record: self.next });
        }
        let m = self.header.dim as usize;
        let features = self.buf[..4 * m]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tail = &self.buf[4 * m..];
        let label = match self.header.label_kind {
            LabelKind::ClassId => {
                let id = u32::from_le_bytes(tail.try_into().unwrap());
                if id >= self.header.classes {
                    return Err(DataError::LabelOutOfRange {
                        record: self.next,
                        label: id as u64,
                        classes: self.header.classes,
                    });
                }
                Label::Class(id)
            }
            LabelKind::Real => Label::Real(f64::from_le_bytes(tail.try_into().unwrap())),
        };
        Ok(FeatureRecord { features, label })
    }
}

impl<R: Read> Iterator for FeatureReader<R> {
    type Item = Result<FeatureRecord, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.header.records {
            return None;
        }
        let rec = self.read_record();
        match rec {
            Ok(_) => self.next += 1,
            Err(_) => self.failed = true,
        }
        Some(rec)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.header.records - self.next) as usize;
        (0, Some(left))
    }
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, DataError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Opens a feature file for streaming. Files longer than the header implies
/// are rejected up front; shorter ones fail at the first incomplete record.
pub fn open_feature_file(path: impl AsRef<Path>) -> Result<FeatureReader<BufReader<File>>, DataError> {
    let file = File::open(path)?;
    let actual = file.metadata()?.len();
    let reader = FeatureReader::new(BufReader::new(file))?;
    let expected = reader.header.file_len();
    if actual > expected {
        return Err(DataError::LengthMismatch { expected, actual });
    }
    Ok(reader)
}

/// Streaming writer. The record count in the header is patched on
/// [`FeatureWriter::finish`].
pub struct FeatureWriter<W: Write + Seek> {
    inner: W,
    header: FeatureHeader,
    written: u64,
}

impl<W: Write + Seek> FeatureWriter<W> {
    pub fn new(mut inner: W, dim: u32, classes: u32, label_kind: LabelKind) -> Result<Self, DataError> {
        let header = FeatureHeader {
            dim,
            classes,
            records: 0,
            label_kind,
        };
        inner.write_all(&header.encode())?;
        Ok(FeatureWriter {
            inner,
            header,
            written: 0,
        })
    }

    pub fn write(&mut self, record: &FeatureRecord) -> Result<(), DataError> {
        if record.features.len() != self.header.dim as usize {
            return Err(DataError::DimensionMismatch {
                expected: self.header.dim as usize,
                found: record.features.len(),
            });
        }
        if record.label.kind() != self.header.label_kind {
            return Err(DataError::LabelKindMismatch {
                expected: self.header.label_kind,
                found: record.label.kind(),
            });
        }
        for v in &record.features {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        match record.label {
            Label::Class(id) => {
                if id >= self.header.classes {
                    return Err(DataError::LabelOutOfRange {
                        record: self.written,
                        label: id as u64,
                        classes: self.header.classes,
                    });
                }
                self.inner.write_all(&id.to_le_bytes())?
            }
            Label::Real(y) => self.inner.write_all(&y.to_le_bytes())?,
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, DataError> {
        self.header.records = self.written;
        self.inner.seek(SeekFrom::Start(0))?;
        self.inner.write_all(&self.header.encode())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_feature_file<'a>(
    path: impl AsRef<Path>,
    dim: u32,
    classes: u32,
    label_kind: LabelKind,
    records: impl IntoIterator<Item = &'a FeatureRecord>,
) -> Result<u64, DataError> {
    let file = File::create(path)?;
    let mut writer = FeatureWriter::new(BufWriter::new(file), dim, classes, label_kind)?;
    for rec in records {
        writer.write(rec)?;
    }
    let n = writer.written;
    writer.finish()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample() -> Vec<FeatureRecord> {
        vec![
            FeatureRecord {
                features: vec![1.0, -2.5, f32::MIN_POSITIVE],
                label: Label::Class(2),
            },
            FeatureRecord {
                features: vec![0.1, 1e-30, -0.0],
                label: Label::Class(0),
            },
            FeatureRecord {
                features: vec![3.25, f32::MAX, 7.0],
                label: Label::Class(1),
            },
        ]
    }

    fn encode(records: &[FeatureRecord]) -> Vec<u8> {
        let mut w = FeatureWriter::new(Cursor::new(Vec::new()), 3, 3, LabelKind::ClassId).unwrap();
        for r in records {
            w.write(r).unwrap();
        }
        w.finish().unwrap().into_inner()
    }

    #[test]
    fn header_layout_is_fixed() {
        let h = FeatureHeader {
            dim: 3,
            classes: 10,
            records: 2,
            label_kind: LabelKind::Real,
        };
        let bytes = h.encode();
        assert_eq!(&bytes[0..4], b"KOCL");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[3, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[10, 0, 0, 0]);
        assert_eq!(&bytes[14..22], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes[22], 1);
        assert_eq!(h.record_len(), 20);
        assert_eq!(h.file_len(), 63);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode(&sample());
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 16);
        let back: Vec<_> = FeatureReader::new(Cursor::new(bytes))
            .unwrap()
            .map(Result::unwrap)
            .collect();
        for (a, b) in back.iter().zip(sample()) {
            let bits_a: Vec<u32> = a.features.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.features.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let bytes = encode(&[]);
        assert_eq!(bytes.len(), HEADER_LEN);
        let mut r = FeatureReader::new(Cursor::new(bytes)).unwrap();
        assert_eq!(r.header().records, 0);
        assert!(r.next().is_none());
    }

    #[test]
    fn truncation_names_the_record() {
        let mut bytes = encode(&sample());
        bytes.truncate(HEADER_LEN + 16 + 7);
        let mut r = FeatureReader::new(Cursor::new(bytes)).unwrap();
        assert!(r.next().unwrap().is_ok());
        match r.next().unwrap() {
            Err(DataError::Truncated { record }) => assert_eq!(record, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(r.next().is_none());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(
            FeatureReader::new(Cursor::new(bytes)),
            Err(DataError::BadMagic { .. })
        ));
        assert!(matches!(
            FeatureReader::new(Cursor::new(b"KOC".to_vec())),
            Err(DataError::TruncatedHeader(3))
        ));
    }

    #[test]
    fn version_and_label_kind_are_checked() {
        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(
            FeatureReader::new(Cursor::new(bytes.clone())),
            Err(DataError::UnsupportedVersion(9))
        ));
        bytes[4] = 1;
        bytes[22] = 7;
        assert!(matches!(
            FeatureReader::new(Cursor::new(bytes)),
            Err(DataError::UnknownLabelKind(7))
        ));
    }

    #[test]
    fn compatibility_errors_are_distinct() {
        let h = FeatureHeader {
            dim: 3,
            classes: 5,
            records: 0,
            label_kind: LabelKind::ClassId,
        };
        assert!(h.check_compatible(3, Some(5), LabelKind::ClassId).is_ok());
        assert!(matches!(
            h.check_compatible(4, Some(5), LabelKind::ClassId),
            Err(DataError::DimensionMismatch { expected: 4, found: 3 })
        ));
        assert!(matches!(
            h.check_compatible(3, Some(6), LabelKind::ClassId),
            Err(DataError::ClassCountMismatch { .. })
        ));
        assert!(matches!(
            h.check_compatible(3, None, LabelKind::Real),
            Err(DataError::LabelKindMismatch { .. })
        ));
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut bytes = encode(&sample());
        let off = HEADER_LEN + 12;
        bytes[off..off + 4].copy_from_slice(&9u32.to_le_bytes());
        let mut r = FeatureReader::new(Cursor::new(bytes)).unwrap();
        assert!(matches!(
            r.next().unwrap(),
            Err(DataError::LabelOutOfRange {
                record: 0,
                label: 9,
                ..
            })
        ));
    }

    #[test]
    fn writer_validates_records() {
        let mut w = FeatureWriter::new(Cursor::new(Vec::new()), 2, 2, LabelKind::ClassId).unwrap();
        assert!(w
            .write(&FeatureRecord {
                features: vec![1.0],
                label: Label::Class(0)
            })
            .is_err());
        assert!(w
            .write(&FeatureRecord {
                features: vec![1.0, 2.0],
                label: Label::Real(0.0)
            })
            .is_err());
        assert!(w
            .write(&FeatureRecord {
                features: vec![1.0, 2.0],
                label: Label::Class(2)
            })
            .is_err());
    }
}
