use ssm_backdoor::defenses::*;
use ssm_backdoor::model::{VimConfig, VimModel};
use ssm_backdoor::numerics::{dft2, SeededRng, Tensor};
use ssm_backdoor::trigger::{PatchTrigger, Trigger};

fn cfg(h: usize, w: usize, c: usize) -> VimConfig {
    VimConfig::for_images(h, w, c, 2)
}

fn random_image(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = SeededRng::new(seed);
    (0..len).map(|_| rng.uniform() as f32).collect()
}

fn patches_of(image: &[f32], cfg: &VimConfig) -> Vec<Vec<f32>> {
    let pd = cfg.patch_dim();
    (0..cfg.num_patches())
        .map(|i| {
            let mut buf = vec![0.0; pd];
            ssm_backdoor::model::extract_patch(image, i, cfg, &mut buf, |v| v);
            buf
        })
        .collect()
}

#[test]
fn patch_drop_zero_fraction_is_identity() {
    let c = cfg(8, 8, 3);
    let img = random_image(c.image_len(), 1);
    let out = patch_drop(&img, 0.0, &mut SeededRng::new(2), &c, &[0.5; 3]).unwrap();
    assert_eq!(out, img);
}

#[test]
fn patch_drop_quarter_of_four_replaces_one_block() {
    let c = cfg(8, 8, 3);
    let img = random_image(c.image_len(), 3);
    let fill = [0.1, 0.2, 0.3];
    let out = patch_drop(&img, 0.25, &mut SeededRng::new(4), &c, &fill).unwrap();
    let before = patches_of(&img, &c);
    let after = patches_of(&out, &c);
    let changed: Vec<usize> = (0..4).filter(|&i| before[i] != after[i]).collect();
    assert_eq!(changed.len(), 1);
    let block = &after[changed[0]];
    assert!(block.chunks(3).all(|px| px == fill));
    let again = patch_drop(&img, 0.25, &mut SeededRng::new(4), &c, &fill).unwrap();
    assert_eq!(out, again);
    assert!(patch_drop(&img, 1.0, &mut SeededRng::new(4), &c, &fill).is_err());
}

#[test]
fn patch_shuffle_preserves_patch_multiset() {
    let c = cfg(16, 16, 3);
    let img = random_image(c.image_len(), 5);
    let identity: Vec<usize> = (0..c.num_patches()).collect();
    assert_eq!(patch_shuffle_with(&img, &identity, &c).unwrap(), img);
    let out = patch_shuffle(&img, &mut SeededRng::new(6), &c).unwrap();
    assert_ne!(out, img);
    let key = |p: Vec<f32>| p.iter().map(|v| v.to_bits()).collect::<Vec<u32>>();
    let mut a: Vec<_> = patches_of(&img, &c).into_iter().map(key).collect();
    let mut b: Vec<_> = patches_of(&out, &c).into_iter().map(key).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    let flat = vec![0.3f32; c.image_len()];
    assert_eq!(patch_shuffle(&flat, &mut SeededRng::new(7), &c).unwrap(), flat);
}

#[test]
fn patch_shuffle_rejects_indivisible_extents() {
    let mut c = cfg(8, 8, 1);
    c.height = 10;
    assert!(patch_shuffle(&vec![0.0; 80], &mut SeededRng::new(1), &c).is_err());
    assert!(patch_shuffle_with(&[0.0; 64], &[0, 0, 1, 2], &cfg(8, 8, 1)).is_err());
}

/// Smooth gradient plus mild texture, roughly photo-like.
fn natural_image(h: usize, w: usize, c: usize, seed: u64) -> Vec<f32> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let base = 0.3 + 0.4 * (y as f64 / h as f64) + 0.1 * (x as f64 * 0.4).sin();
            for ch in 0..c {
                out.push((base + 0.05 * ch as f64 + 0.02 * rng.gaussian()).clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

fn psnr(a: &[f32], b: &[f32]) -> f64 {
    let mse: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

#[test]
fn jpeg_quality_100_is_nearly_lossless() {
    let img = natural_image(32, 32, 3, 1);
    let out = jpeg_compress(&img, 32, 32, 3, 100).unwrap();
    assert!(psnr(&img, &out) > 40.0, "psnr {}", psnr(&img, &out));
}

#[test]
fn jpeg_keeps_flat_gray() {
    // below quality 50 the DC step alone exceeds two gray levels
    for q in [50, 75, 90, 100] {
        let img = vec![0.6f32; 20 * 12];
        let out = jpeg_compress(&img, 20, 12, 1, q).unwrap();
        assert!(out.iter().all(|&v| (v - 0.6).abs() <= 1.0 / 255.0 + 1e-6), "quality {q}");
    }
}

fn high_band_energy(plane: &[f32], h: usize, w: usize) -> f64 {
    let t = Tensor::new(vec![h, w], plane.iter().map(|&v| v as f64).collect()).unwrap();
    let power = dft2(&t).unwrap().power();
    let mut e = 0.0;
    for u in 0..h {
        for v in 0..w {
            let fu = u.min(h - u);
            let fv = v.min(w - v);
            if fu + fv >= h / 4 {
                e += power[u * w + v];
            }
        }
    }
    e
}

#[test]
fn jpeg_low_quality_removes_high_frequencies() {
    let img = random_image(32 * 32, 9);
    let out = jpeg_compress(&img, 32, 32, 1, 10).unwrap();
    assert!(high_band_energy(&out, 32, 32) < high_band_energy(&img, 32, 32));
}

#[test]
fn jpeg_is_nearly_idempotent() {
    let img = natural_image(32, 32, 3, 4);
    let once = jpeg_compress(&img, 32, 32, 3, 75).unwrap();
    let twice = jpeg_compress(&once, 32, 32, 3, 75).unwrap();
    let mean: f64 = once.iter().zip(&twice).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / once.len() as f64;
    assert!(mean < 2.0 / 255.0, "mean change {mean}");
}

#[test]
fn quantization_table_scaling() {
    assert_eq!(quantization_table(50).unwrap()[0], 16.0);
    assert_eq!(quantization_table(75).unwrap()[0], 8.0);
    assert!(quantization_table(100).unwrap().iter().all(|&q| q == 1.0));
    assert_eq!(quantization_table(1).unwrap()[63], 255.0);
    assert!(quantization_table(0).is_err());
    assert!(jpeg_compress(&[0.0; 10], 3, 3, 1, 50).is_err());
}

#[test]
fn asr_fixtures() {
    assert_eq!(attack_success_rate(&[1; 6], &[0, 0, 2, 1, 3, 0], 1).unwrap().rate, 1.0);
    assert_eq!(attack_success_rate(&[0; 6], &[0, 0, 2, 1, 3, 0], 1).unwrap().rate, 0.0);
    let labels = [0, 2, 3, 4, 5, 6, 7, 8, 9, 0];
    let preds = [1, 1, 1, 1, 1, 1, 1, 0, 2, 3];
    let asr = attack_success_rate(&preds, &labels, 1).unwrap();
    assert_eq!((asr.hits, asr.total), (7, 10));
    assert_eq!(asr.rate, 0.7);
    // target-labelled samples never enter the denominator
    let asr = attack_success_rate(&[1, 1, 0, 1], &[1, 1, 0, 2], 1).unwrap();
    assert_eq!((asr.hits, asr.total, asr.rate), (1, 2, 0.5));
    assert!(attack_success_rate(&[1], &[1], 1).is_err());
    assert_eq!(accuracy(&[0, 1, 1, 0, 2, 2, 1, 0, 0, 1], &[0, 1, 0, 0, 2, 1, 1, 0, 1, 1]).unwrap(), 0.7);
    assert!(accuracy(&[], &[]).is_err());
}

fn biased_model(class: usize) -> VimModel<f32> {
    let mut m = VimModel::random(cfg(8, 8, 3), 1).unwrap();
    m.head_w.data_mut().fill(0.0);
    m.head_b.data_mut().fill(0.0);
    m.head_b.data_mut()[class] = 5.0;
    m
}

#[test]
fn evaluate_constant_predictors() {
    let c = cfg(8, 8, 3);
    let images = random_image(c.image_len() * 6, 2);
    let labels = [0, 1, 0, 0, 1, 0];
    let trigger = Trigger::Patch(PatchTrigger::corner(8, 8, 3));
    let opts = EvalOptions { seed: 0, fill: vec![0.5; 3] };
    let row = evaluate(&biased_model(1), &images, &labels, &trigger, 1, &DefenseSpec::None, &opts).unwrap();
    assert_eq!((row.asr, row.asr_count, row.cda), (1.0, 4, 2.0 / 6.0));
    let row = evaluate(&biased_model(0), &images, &labels, &trigger, 1, &DefenseSpec::None, &opts).unwrap();
    assert_eq!((row.asr, row.cda), (0.0, 4.0 / 6.0));
    assert!(evaluate(&biased_model(0), &[], &[], &trigger, 1, &DefenseSpec::None, &opts).is_err());
}

#[test]
fn evaluate_grid_rows_and_csv() {
    let c = cfg(8, 8, 3);
    let model: VimModel<f32> = VimModel::random(c, 3).unwrap();
    let images = random_image(c.image_len() * 8, 4);
    let labels = [0, 1, 0, 1, 0, 1, 0, 1];
    let trigger = Trigger::Patch(PatchTrigger::corner(8, 8, 3));
    let opts = EvalOptions { seed: 5, fill: vec![0.5; 3] };
    assert!(evaluate_grid(&model, &images, &labels, &trigger, 1, &[], &opts).is_err());
    let grid = DefenseSpec::default_grid();
    let rep = evaluate_grid(&model, &images, &labels, &trigger, 1, &grid, &opts).unwrap();
    assert_eq!(rep.rows.len(), 4);
    for r in &rep.rows {
        assert!((0.0..=1.0).contains(&r.cda) && (0.0..=1.0).contains(&r.asr));
        assert_eq!((r.clean_count, r.asr_count), (8, 4));
    }
    assert_eq!(rep.to_csv().lines().count(), 5);
    assert_eq!(rep, evaluate_grid(&model, &images, &labels, &trigger, 1, &grid, &opts).unwrap());
    let plain = model.predict(&images, 8).unwrap();
    assert_eq!(rep.cda, accuracy(&plain, &labels).unwrap());
}

#[test]
fn defense_spec_serde_and_validation() {
    let json = serde_json::to_string(&DefenseSpec::default_grid()).unwrap();
    assert_eq!(
        json,
        r#"[{"kind":"none"},{"kind":"patch_drop","fraction":0.25},{"kind":"patch_shuffle"},{"kind":"jpeg","quality":75}]"#
    );
    let d: DefenseSpec = serde_json::from_str(r#"{"kind":"jpeg"}"#).unwrap();
    assert_eq!(d, DefenseSpec::Jpeg { quality: 75 });
    assert!(DefenseSpec::PatchDrop { fraction: 1.0 }.validate().is_err());
    assert!(DefenseSpec::Jpeg { quality: 101 }.validate().is_err());
}
