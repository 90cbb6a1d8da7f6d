use std::io::{Cursor, Read};
use std::path::PathBuf;

use kocl_core::data::{
    class_points, open_feature_file, read_csv, regression_points, write_feature_file, DataError, FeatureHeader,
    FeatureReader, FeatureRecord, Label, LabelKind, HEADER_LEN,
};
use kocl_core::runner::chunk_points;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn reads_class_fixture() {
    let reader = open_feature_file(fixture("classes_m3_k4.kocl")).unwrap();
    assert_eq!(
        *reader.header(),
        FeatureHeader {
            dim: 3,
            classes: 4,
            records: 5,
            label_kind: LabelKind::ClassId
        }
    );
    let recs: Vec<FeatureRecord> = reader.map(|r| r.unwrap()).collect();
    assert_eq!(recs.len(), 5);
    assert_eq!(recs[0].features, vec![0.5, -1.25, 3.0]);
    assert_eq!(recs[0].label, Label::Class(2));
    assert_eq!(recs[3].features[2], 1e-3f32);
    assert_eq!(recs[4].features[1].to_bits(), (-0.0f32).to_bits());
    assert_eq!(recs[4].features[2], 65504.0);
    assert_eq!(
        recs.iter().map(|r| r.label).collect::<Vec<_>>(),
        [2, 0, 3, 1, 2].map(Label::Class).to_vec()
    );
}

#[test]
fn reads_real_fixture() {
    let reader = open_feature_file(fixture("real_m2.kocl")).unwrap();
    assert_eq!(reader.header().label_kind, LabelKind::Real);
    let pts: Vec<_> = regression_points(reader).map(|r| r.unwrap()).collect();
    assert_eq!(pts.len(), 3);
    assert_eq!(pts[1].0.as_slice(), &[-1.0, 0.5]);
    assert_eq!(pts[1].1, -2.25);
    assert_eq!(pts[2].1, 1e-9);
}

#[test]
fn reads_csv_fixture() {
    let data = read_csv(std::fs::File::open(fixture("tiny.csv")).unwrap()).unwrap();
    assert_eq!((data.dim, data.classes), (2, 3));
    assert_eq!(data.rows[2], (vec![3.0, -2.5], 1.0));
}

#[test]
fn class_fixture_feeds_the_chunker() {
    let reader = open_feature_file(fixture("classes_m3_k4.kocl")).unwrap();
    let chunks: Vec<_> = chunk_points(class_points(reader), 2).map(|c| c.unwrap()).collect();
    assert_eq!(chunks.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
    assert_eq!(chunks[1].labels, vec![3, 1]);
    assert_eq!(chunks[0].features[0][1], -1.25);
}

#[test]
fn real_labels_are_rejected_as_classes() {
    let reader = open_feature_file(fixture("real_m2.kocl")).unwrap();
    assert!(class_points(reader).next().unwrap().is_err());
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.kocl");
    let recs: Vec<FeatureRecord> = (0..64)
        .map(|i| FeatureRecord {
            features: (0..7)
                .map(|j| f32::from_bits(0x3f80_0000 ^ (i * 7 + j as u32).wrapping_mul(2654435761)))
                .collect(),
            label: Label::Class(i % 5),
        })
        .filter(|r| r.features.iter().all(|v| v.is_finite()))
        .collect();
    let n = write_feature_file(&path, 7, 5, LabelKind::ClassId, &recs).unwrap();
    assert_eq!(n, recs.len() as u64);
    assert_eq!(
        std::fs::metadata(&path).unwrap().len(),
        HEADER_LEN as u64 + n * (7 * 4 + 4)
    );
    let back: Vec<FeatureRecord> = open_feature_file(&path).unwrap().map(|r| r.unwrap()).collect();
    assert_eq!(back.len(), recs.len());
    for (a, b) in back.iter().zip(&recs) {
        let bits = |r: &FeatureRecord| r.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
        assert_eq!(a.label, b.label);
    }
}

#[test]
fn corruption_errors_are_distinct() {
    let bytes = std::fs::read(fixture("classes_m3_k4.kocl")).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        FeatureReader::new(Cursor::new(bad)),
        Err(DataError::BadMagic { .. })
    ));

    // cut in the middle of record 3
    let cut = &bytes[..HEADER_LEN + 3 * 16 + 5];
    let results: Vec<_> = FeatureReader::new(Cursor::new(cut.to_vec())).unwrap().collect();
    assert_eq!(results.len(), 4);
    assert!(results[..3].iter().all(|r| r.is_ok()));
    assert!(matches!(results[3], Err(DataError::Truncated { record: 3 })));

    assert!(matches!(
        FeatureReader::new(Cursor::new(bytes[..10].to_vec())),
        Err(DataError::TruncatedHeader(10))
    ));

    let dir = tempfile::tempdir().unwrap();
    let long = dir.path().join("long.kocl");
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0u8; 3]);
    std::fs::write(&long, extra).unwrap();
    assert!(matches!(
        open_feature_file(&long),
        Err(DataError::LengthMismatch { .. })
    ));

    let header = *FeatureReader::new(Cursor::new(bytes)).unwrap().header();
    assert!(matches!(
        header.check_compatible(8, Some(4), LabelKind::ClassId),
        Err(DataError::DimensionMismatch { expected: 8, found: 3 })
    ));
    assert!(header.check_compatible(3, Some(4), LabelKind::ClassId).is_ok());
}

#[test]
fn empty_file_is_an_empty_stream() {
    let header = FeatureHeader {
        dim: 4,
        classes: 2,
        records: 0,
        label_kind: LabelKind::ClassId,
    };
    let mut reader = FeatureReader::new(Cursor::new(header.encode().to_vec())).unwrap();
    assert!(reader.next().is_none());
}

/// Endless byte source: a header announcing `records` records followed by
/// generated record bytes.
pub struct SyntheticSource {
    head: Vec<u8>,
    dim: usize,
    pos: u64,
}

impl SyntheticSource {
    pub fn new(dim: u32, records: u64) -> Self {
        let header = FeatureHeader {
            dim,
            classes: 3,
            records,
            label_kind: LabelKind::ClassId,
        };
        SyntheticSource {
            head: header.encode().to_vec(),
            dim: dim as usize,
            pos: 0,
        }
    }
}

impl Read for SyntheticSource {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let rec_len = (4 * self.dim + 4) as u64;
        for (i, b) in buf.iter_mut().enumerate() {
            let p = self.pos + i as u64;
            *b = if p < HEADER_LEN as u64 {
                self.head[p as usize]
            } else {
                let off = (p - HEADER_LEN as u64) % rec_len;
                let rec = (p - HEADER_LEN as u64) / rec_len;
                if off >= 4 * self.dim as u64 {
                    // label bytes: class id rec % 3, little-endian
                    if off == 4 * self.dim as u64 {
                        (rec % 3) as u8
                    } else {
                        0
                    }
                } else {
                    // each float is 1.0 (0x3f800000)
                    [0x00, 0x00, 0x80, 0x3f][(off % 4) as usize]
                }
            };
        }
        self.pos += buf.len() as u64;
        Ok(buf.len())
    }
}

#[test]
fn streams_from_an_unbounded_source() {
    let reader = FeatureReader::new(SyntheticSource::new(16, u64::MAX)).unwrap();
    let mut seen = 0u64;
    for chunk in chunk_points(class_points(reader), 128).take(200) {
        let chunk = chunk.unwrap();
        for (phi, &label) in chunk.features.iter().zip(&chunk.labels) {
            assert!(phi.iter().all(|&v| v == 1.0));
            assert_eq!(label as u64, seen % 3);
            seen += 1;
        }
    }
    assert_eq!(seen, 200 * 128);
}
