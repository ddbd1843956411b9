//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes (row-major 32x32 planes).

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_BATCH_RECORDS: usize = 10_000;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

/// Parses any whole number of records into `(pixels HWC, labels)`.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            path,
            format!(
                "expected a positive multiple of {CIFAR_RECORD} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(count * PLANE * 3);
    let mut labels = Vec::with_capacity(count);
    for rec in bytes.chunks(CIFAR_RECORD) {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::format(path, format!("label byte {label} outside 0..10")));
        }
        labels.push(label);
        let planes = &rec[1..];
        for p in 0..PLANE {
            for c in 0..3 {
                pixels.push(planes[c * PLANE + p] as f32 / 255.0);
            }
        }
    }
    Ok((pixels, labels))
}

fn read_batch(path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let want = CIFAR_RECORD * CIFAR_BATCH_RECORDS;
    if bytes.len() != want {
        return Err(Error::format(
            path,
            format!("expected {want} bytes, found {}", bytes.len()),
        ));
    }
    parse_cifar_records(&bytes, path)
}

/// Loads `data_batch_{1..5}.bin` (train) and `test_batch.bin` (test).
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut ds = Dataset {
        height: SIDE,
        width: SIDE,
        channels: 3,
        num_classes: 10,
        images: Vec::new(),
        labels: Vec::new(),
        splits: Vec::new(),
        provenance: format!("cifar10:{}", dir.display()),
    };
    let files = (1..=5)
        .map(|i| (format!("data_batch_{i}.bin"), Split::Train))
        .chain(std::iter::once(("test_batch.bin".to_string(), Split::Test)));
    for (name, split) in files {
        let (px, lb) = read_batch(&dir.join(name))?;
        ds.splits.extend(std::iter::repeat_n(split, lb.len()));
        ds.images.extend(px);
        ds.labels.extend(lb);
    }
    ds.validate()?;
    Ok(ds)
}
