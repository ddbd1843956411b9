//! IDX files (big-endian): magic `0x00000803` for `u8` image tensors and
//! `0x00000801` for `u8` label vectors.

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, format!("truncated header at byte {at}")))
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad idx image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let want = 16 + count * rows * cols;
    if bytes.len() != want {
        return Err(Error::format(path, format!("expected {want} bytes, found {}", bytes.len())));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(path, format!("bad idx label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::format(
            path,
            format!("expected {} bytes, found {}", 8 + count, bytes.len()),
        ));
    }
    Ok(bytes[8..].to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Parses an image/label file pair into a single-channel dataset.
pub fn idx_pair_to_dataset(images: &IdxImages, labels: &[u8], split: Split, provenance: String) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::invalid(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let num_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    let ds = Dataset {
        height: images.rows,
        width: images.cols,
        channels: 1,
        num_classes,
        images: images.pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        labels: labels.iter().map(|&l| l as usize).collect(),
        splits: vec![split; labels.len()],
        provenance,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_pair(dir: &Path, prefix: &str, split: Split) -> Result<Dataset> {
    let ip = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lp = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let ib = std::fs::read(&ip).map_err(|e| Error::io(&ip, e))?;
    let lb = std::fs::read(&lp).map_err(|e| Error::io(&lp, e))?;
    let images = parse_idx_images(&ib, &ip)?;
    let labels = parse_idx_labels(&lb, &lp)?;
    idx_pair_to_dataset(&images, &labels, split, format!("mnist:{}", dir.display()))
}

/// Loads `train-*-idx?-ubyte` (train) and `t10k-*-idx?-ubyte` (test).
pub fn load_mnist_idx(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut train = read_pair(dir, "train", Split::Train)?;
    let test = read_pair(dir, "t10k", Split::Test)?;
    if (train.height, train.width) != (test.height, test.width) {
        return Err(Error::format(dir, "train and test image extents differ"));
    }
    train.num_classes = train.num_classes.max(test.num_classes);
    train.images.extend(test.images);
    train.labels.extend(test.labels);
    train.splits.extend(test.splits);
    Ok(train)
}
