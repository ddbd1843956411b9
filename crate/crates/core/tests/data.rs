use std::path::Path;

use ssm_backdoor::data::*;
use ssm_backdoor::numerics::{dft2, Tensor};

fn cifar_record(label: u8, seed: u8) -> Vec<u8> {
    let mut rec = vec![label];
    rec.extend((0..3072).map(|k| (k as u32 * 7 + seed as u32) as u8));
    rec
}

#[test]
fn cifar_fixture_record_zero_pixels() {
    let bytes = [cifar_record(3, 1), cifar_record(9, 2)].concat();
    let (px, labels) = parse_cifar_records(&bytes, Path::new("fixture")).unwrap();
    assert_eq!(labels, vec![3, 9]);
    assert_eq!(px.len(), 2 * 3072);
    // pixel (row 0, col 1) of record 0: channel-planar source, HWC output
    let rec = &bytes[1..3073];
    for c in 0..3 {
        assert_eq!(px[3 + c], rec[c * 1024 + 1] as f32 / 255.0);
    }
    // last pixel of record 0, blue
    assert_eq!(px[3071], rec[2 * 1024 + 1023] as f32 / 255.0);
}

#[test]
fn cifar_truncated_file_reports_sizes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("data_batch_1.bin"), vec![0u8; 3073 * 2]).unwrap();
    let err = load_cifar10(dir.path()).unwrap_err().to_string();
    assert!(err.contains("30730000") && err.contains("6146"), "{err}");
}

#[test]
fn cifar_missing_files_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_cifar10(dir.path()).is_err());
    assert!(parse_cifar_records(&[0u8; 100], Path::new("x")).is_err());
}

/// Needs the real dataset: `CIFAR10_DIR=/path/to/cifar-10-batches-bin`.
#[test]
fn cifar_full_train_histogram() {
    let Ok(dir) = std::env::var("CIFAR10_DIR") else {
        eprintln!("CIFAR10_DIR not set; skipping full CIFAR-10 load");
        return;
    };
    let ds = load_cifar10(dir).unwrap();
    assert_eq!(ds.class_histogram(Split::Train), vec![5000; 10]);
    assert_eq!(ds.indices(Split::Test).len(), 10_000);
}

#[test]
fn idx_two_by_two_fixture() {
    let img = IdxImages {
        count: 1,
        rows: 2,
        cols: 2,
        pixels: vec![0, 255, 51, 102],
    };
    let bytes = encode_idx_images(&img);
    assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
    let parsed = parse_idx_images(&bytes, Path::new("f")).unwrap();
    assert_eq!(parsed, img);
    let ds = idx_pair_to_dataset(&parsed, &[7], Split::Train, "fixture".into()).unwrap();
    assert_eq!((ds.len(), ds.height, ds.width, ds.channels), (1, 2, 2, 1));
    assert_eq!(ds.images, vec![0.0, 1.0, 0.2, 0.4]);
}

#[test]
fn idx_wrong_magic_is_rejected() {
    let mut bytes = encode_idx_images(&IdxImages {
        count: 1,
        rows: 1,
        cols: 1,
        pixels: vec![0],
    });
    bytes[3] = 0x01;
    assert!(parse_idx_images(&bytes, Path::new("f")).is_err());
    assert!(parse_idx_labels(&encode_idx_images(&IdxImages { count: 0, rows: 1, cols: 1, pixels: vec![] }), Path::new("f")).is_err());
}

#[test]
fn mnist_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = IdxImages {
        count: 3,
        rows: 4,
        cols: 4,
        pixels: (0..48).map(|k| (k * 5) as u8).collect(),
    };
    let labels = [1u8, 0, 9];
    for prefix in ["train", "t10k"] {
        std::fs::write(dir.path().join(format!("{prefix}-images-idx3-ubyte")), encode_idx_images(&imgs)).unwrap();
        std::fs::write(dir.path().join(format!("{prefix}-labels-idx1-ubyte")), encode_idx_labels(&labels)).unwrap();
    }
    let a = load_mnist_idx(dir.path()).unwrap();
    let b = load_mnist_idx(dir.path()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    assert_eq!(a.indices(Split::Test), vec![3, 4, 5]);
    let back: Vec<u8> = a.image(0).iter().map(|v| (v * 255.0).round() as u8).collect();
    assert_eq!(back, imgs.pixels[..16]);
}

#[test]
fn synthetic_class_power_peaks_at_its_frequency() {
    let spec = SyntheticSpec {
        per_class: 30,
        ..SyntheticSpec::default()
    };
    let ds = make_synthetic_with(&spec).unwrap();
    let (h, w) = (ds.height, ds.width);
    for class in 0..2 {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        let mut power = vec![0.0f64; h * w];
        for &i in &idx {
            let plane: Vec<f64> = ds.image(i).iter().step_by(ds.channels).map(|&v| v as f64).collect();
            let grid = dft2(&Tensor::new(vec![h, w], plane).unwrap()).unwrap();
            power.iter_mut().zip(grid.power()).for_each(|(p, q)| *p += q);
        }
        let peak = (1..h * w).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
        let (u, v) = spec.class_frequency(class);
        let partner = ((h - u) % h) * w + (w - v) % w;
        assert!(peak == u * w + v || peak == partner, "class {class} peak {peak}");
    }
}

#[test]
fn synthetic_phase_varies_per_image() {
    let ds = make_synthetic(2, 40, 16, 16, 3).unwrap();
    // with random phases the per-class mean image is nearly flat
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == 0).collect();
    let il = ds.image_len();
    let mut mean = vec![0.0f64; il];
    for &i in &idx {
        mean.iter_mut().zip(ds.image(i)).for_each(|(m, &v)| *m += v as f64 / idx.len() as f64);
    }
    let spread = mean.iter().map(|m| (m - 0.5).abs()).fold(0.0, f64::max);
    assert!(spread < 0.12, "{spread}");
}

#[test]
fn synthetic_is_deterministic_and_valid() {
    let a = make_synthetic(3, 20, 16, 16, 5).unwrap();
    let b = make_synthetic(3, 20, 16, 16, 5).unwrap();
    let c = make_synthetic(3, 20, 16, 16, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.images, c.images);
    a.validate().unwrap();
    assert_eq!(a.len(), 60);
    assert!(make_synthetic(1, 20, 16, 16, 5).is_err());
}

#[test]
fn dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_synthetic(2, 5, 8, 8, 1).unwrap();
    write_dump(&ds, dir.path()).unwrap();
    assert_eq!(read_dump(dir.path()).unwrap(), ds);
}

#[test]
fn batches_cover_split_exactly_once() {
    let ds = make_synthetic(2, 50, 8, 8, 2).unwrap();
    let train = ds.indices(Split::Train);
    let one = batches(&ds, Split::Train, train.len(), 9, 0).unwrap();
    assert_eq!(one.len(), 1);
    let b0 = batches(&ds, Split::Train, 16, 9, 0).unwrap();
    let b1 = batches(&ds, Split::Train, 16, 9, 1).unwrap();
    assert_ne!(b0, b1);
    assert_eq!(b0, batches(&ds, Split::Train, 16, 9, 0).unwrap());
    let mut all: Vec<usize> = b0.concat();
    all.sort_unstable();
    assert_eq!(all, train);
    assert!(batches(&ds, Split::Train, 0, 9, 0).is_err());
}

#[test]
fn carve_validation_moves_training_samples() {
    let mut ds = make_synthetic(2, 50, 8, 8, 2).unwrap();
    let before = ds.indices(Split::Train).len();
    let val_before = ds.indices(Split::Val).len();
    ds.carve_validation(0.5, 1).unwrap();
    assert_eq!(ds.indices(Split::Train).len() + ds.indices(Split::Val).len(), before + val_before);
    assert!(ds.carve_validation(1.5, 1).is_err());
}
