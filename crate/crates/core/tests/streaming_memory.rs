//! Peak-heap check for the feature-file streaming path. Lives in its own
//! test binary because it installs a counting global allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::io::Read;
use std::sync::atomic::{AtomicUsize, Ordering};

use kocl_core::data::{class_points, FeatureHeader, FeatureReader, LabelKind, HEADER_LEN};
use kocl_core::runner::chunk_points;

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

/// Header followed by `records` records of ones, labels cycling over 3.
struct Ones {
    head: [u8; HEADER_LEN],
    rec_len: u64,
    dim_bytes: u64,
    pos: u64,
}

impl Read for Ones {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        for (i, b) in buf.iter_mut().enumerate() {
            let p = self.pos + i as u64;
            *b = if p < HEADER_LEN as u64 {
                self.head[p as usize]
            } else {
                let q = p - HEADER_LEN as u64;
                let off = q % self.rec_len;
                if off < self.dim_bytes {
                    [0x00, 0x00, 0x80, 0x3f][(off % 4) as usize]
                } else if off == self.dim_bytes {
                    ((q / self.rec_len) % 3) as u8
                } else {
                    0
                }
            };
        }
        self.pos += buf.len() as u64;
        Ok(buf.len())
    }
}

#[test]
fn peak_heap_is_bounded_by_one_chunk() {
    let dim = 64u32;
    let records = 1_000_000u64;
    let header = FeatureHeader {
        dim,
        classes: 3,
        records,
        label_kind: LabelKind::ClassId,
    };
    let source = Ones {
        head: header.encode(),
        rec_len: header.record_len() as u64,
        dim_bytes: 4 * dim as u64,
        pos: 0,
    };
    let streamed = header.file_len();

    let baseline = LIVE.load(Ordering::Relaxed);
    PEAK.store(baseline, Ordering::Relaxed);
    let reader = FeatureReader::new(source).unwrap();
    let mut n = 0u64;
    for chunk in chunk_points(class_points(reader), 128) {
        n += chunk.unwrap().len() as u64;
    }
    let peak = PEAK.load(Ordering::Relaxed) - baseline;

    assert_eq!(n, records);
    // one chunk of 128 f64 vectors of length 64 is 64 KiB
    assert!(
        peak < 512 * 1024,
        "peak heap {peak} bytes while streaming {streamed} bytes"
    );
    assert!(streamed > 200 * 1024 * 1024);
}
