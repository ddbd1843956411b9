//! Datasets, splits and deterministic batching.

mod cifar;
mod dataset;
mod mnist;
mod synthetic;

pub use cifar::{load_cifar10, parse_cifar_records, CIFAR_BATCH_RECORDS, CIFAR_RECORD};
pub use dataset::{batches, Dataset, Split};
pub use mnist::{
    encode_idx_images, encode_idx_labels, idx_pair_to_dataset, load_mnist_idx, parse_idx_images, parse_idx_labels,
    IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synthetic::{make_synthetic, make_synthetic_with, read_dump, write_dump, DumpManifest, SyntheticSpec, CLASS_FREQUENCIES};

