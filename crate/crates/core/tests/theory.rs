use proptest::prelude::*;

use ssm_backdoor::theory::*;
use ssm_backdoor::model::{ssm_scan, VimConfig, VimModel};
use ssm_backdoor::numerics::{SeededRng, Tensor};
use ssm_backdoor::trigger::{build_mask, generate_trigger, FrequencyHeatmap};

fn gaussians(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.gaussian()).collect()
}

#[test]
fn linear_attention_single_step() {
    let (q, k, v) = ([0.5, 2.0], [1.5, 0.25], [3.0, -1.0, 4.0]);
    let y = linear_attention_scan(&q, &k, &v, 1, 2, 3).unwrap();
    let qk = 0.5 * 1.5 + 2.0 * 0.25;
    for (yi, vi) in y.iter().zip(v) {
        assert!((yi - qk * vi / qk).abs() < 1e-15);
    }
}

#[test]
fn linear_attention_equal_keys_and_values_return_the_value() {
    let mut rng = SeededRng::new(2);
    let steps = 6;
    let q = positive_features(&gaussians(steps * 3, &mut rng));
    let k: Vec<f64> = [0.3, 1.2, 0.7].repeat(steps);
    let v: Vec<f64> = [2.0, -5.0].repeat(steps);
    let y = linear_attention_scan(&q, &k, &v, steps, 3, 2).unwrap();
    for row in y.chunks(2) {
        assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] + 5.0).abs() < 1e-12);
    }
}

#[test]
fn linear_attention_zero_denominator_names_step() {
    let q = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
    let k = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    let v = [1.0, 2.0, 3.0];
    match linear_attention_scan(&q, &k, &v, 3, 2, 1) {
        Err(ssm_backdoor::Error::ZeroDenominator { step }) => assert_eq!(step, 1),
        other => panic!("expected zero denominator, got {other:?}"),
    }
    assert!(matches!(
        linear_attention_direct(&q, &k, &v, 3, 2, 1),
        Err(ssm_backdoor::Error::ZeroDenominator { step: 1 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_attention_recurrent_matches_direct(seed in 0u64..100_000, steps in 1usize..12, dk in 1usize..6, dv in 1usize..6) {
        let mut rng = SeededRng::new(seed);
        let q = positive_features(&gaussians(steps * dk, &mut rng));
        let k = positive_features(&gaussians(steps * dk, &mut rng));
        let v = gaussians(steps * dv, &mut rng);
        let a = linear_attention_scan(&q, &k, &v, steps, dk, dv).unwrap();
        let b = linear_attention_direct(&q, &k, &v, steps, dk, dv).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

fn small_model(seed: u64, h: usize) -> VimModel<f64> {
    let mut cfg = VimConfig::for_images(h, h, 3, 2);
    cfg.embed_dim = 6;
    cfg.state_dim = 3;
    VimModel::random(cfg, seed).unwrap()
}

#[test]
fn unrolled_single_step_equals_scan() {
    let model = small_model(1, 4);
    let mut rng = SeededRng::new(3);
    let tokens = Tensor::new(vec![1, 6], gaussians(6, &mut rng)).unwrap();
    let (_, trace) = ssm_scan(&tokens, &model.blocks[0], None).unwrap();
    let unrolled = unrolled_block_state(&tokens, &model.blocks[0], None).unwrap();
    assert_eq!(trace.final_state(), unrolled.as_slice());
}

#[test]
fn unrolled_total_forgetting_keeps_last_injection() {
    let model = small_model(2, 8);
    let mut rng = SeededRng::new(4);
    let tokens = Tensor::new(vec![5, 6], gaussians(30, &mut rng)).unwrap();
    let (_, inj) = model.blocks[0].gates_and_injections(&tokens, Some(0.0)).unwrap();
    let h = unrolled_block_state(&tokens, &model.blocks[0], Some(0.0)).unwrap();
    assert_eq!(h, inj[4 * 18..].to_vec());
}

#[test]
fn unrolled_matches_scan_over_many_seeds() {
    let rep = scan_equivalence(0..200, 16, 4, 3).unwrap();
    assert_eq!(rep.cases, 200);
    assert!(rep.max_abs_error < 1e-9, "{}", rep.max_abs_error);
}

fn random_images(count: usize, len: usize, seed: u64) -> Vec<f32> {
    let mut rng = SeededRng::new(seed);
    (0..count * len).map(|_| rng.uniform() as f32).collect()
}

#[test]
fn last_position_influence_is_the_injection_jacobian() {
    let mut model = small_model(5, 8);
    model.gate_override = Some(0.5);
    let opts = ProbeOptions::default();
    let img = random_images(1, model.config.image_len(), 6);
    let prof = influence_profile(&model, &img, 1, InfluenceMode::Localized(InfluenceMethod::Gradient), &opts).unwrap();
    // oracle: finite-difference Jacobian of inject(N) alone
    let image: Vec<f64> = img.iter().map(|&v| v as f64).collect();
    let tokens = block_inputs(&model, &image, 0).unwrap();
    let (d, last) = (6, 3);
    let mut fro = 0.0;
    for k in 0..d {
        let shift = |s: f64| {
            let mut t = tokens.clone();
            t.data_mut()[last * d + k] += s;
            let (_, inj) = model.blocks[0].gates_and_injections(&t, Some(0.5)).unwrap();
            inj[last * 18..].to_vec()
        };
        let (p, m) = (shift(1e-6), shift(-1e-6));
        fro += p.iter().zip(&m).map(|(a, b)| ((a - b) / 2e-6).powi(2)).sum::<f64>();
    }
    let want = fro.sqrt();
    assert!((prof.influence[last] - want).abs() < 1e-6 * want, "{} vs {want}", prof.influence[last]);
}

#[test]
fn forced_half_gate_halves_per_step_on_uniform_tokens() {
    let mut model = small_model(7, 16);
    model.gate_override = Some(0.5);
    let img = vec![0.4f32; model.config.image_len()];
    let prof = influence_profile(&model, &img, 1, InfluenceMode::Localized(InfluenceMethod::Gradient), &ProbeOptions::default()).unwrap();
    for w in prof.influence.windows(2) {
        assert!((w[0] / w[1] - 0.5).abs() < 1e-9);
    }
    let fit = fit_decay(&prof.influence).unwrap();
    assert!((fit.slope - 0.5f64.ln()).abs() < 1e-9);
    assert!(prof.influence[15] / prof.influence[0] > 1e4);
}

#[test]
fn finite_difference_agrees_with_tape_jacobian() {
    let model = small_model(8, 8);
    let opts = ProbeOptions { seed: 3, ..ProbeOptions::default() };
    let img = random_images(1, model.config.image_len(), 9);
    let fd = influence_profile(&model, &img, 1, InfluenceMode::Localized(InfluenceMethod::FiniteDifference), &opts).unwrap();
    let image: Vec<f64> = img.iter().map(|&v| v as f64).collect();
    let tokens = block_inputs(&model, &image, 0).unwrap();
    let jac = final_state_jacobian(&model, &tokens, 0).unwrap();
    let mut rng = SeededRng::substream(3, "influence-direction", 0);
    let mut dir: Vec<f64> = (0..6).map(|_| rng.gaussian()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let seq = 4;
    for i in 0..seq {
        let jv: f64 = jac
            .chunks(seq * 6)
            .map(|row| row[i * 6..(i + 1) * 6].iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((fd.influence[i] - jv).abs() < 1e-6 * jv.max(1e-12), "position {i}: {} vs {jv}", fd.influence[i]);
    }
}

#[test]
fn forced_gate_slope_on_random_inputs() {
    for seed in 0..3 {
        let mut model = small_model(seed, 16);
        model.gate_override = Some(0.5);
        let img = random_images(4, model.config.image_len(), seed + 10);
        let prof = influence_profile(&model, &img, 4, InfluenceMode::Localized(InfluenceMethod::Gradient), &ProbeOptions::default()).unwrap();
        let fit = fit_decay(&prof.influence).unwrap();
        assert!((fit.slope - 0.5f64.ln()).abs() < 0.05, "seed {seed}: slope {}", fit.slope);
    }
}

#[test]
fn natural_gates_bound_the_decay() {
    let model = small_model(11, 16);
    let img = random_images(4, model.config.image_len(), 12);
    let prof = influence_profile(&model, &img, 4, InfluenceMode::Localized(InfluenceMethod::Gradient), &ProbeOptions::default()).unwrap();
    let mut alpha: f64 = 0.0;
    for chunk in img.chunks(model.config.image_len()) {
        let image: Vec<f64> = chunk.iter().map(|&v| v as f64).collect();
        let tokens = block_inputs(&model, &image, 0).unwrap();
        let (gates, _) = model.blocks[0].gates_and_injections(&tokens, None).unwrap();
        alpha = gates.iter().fold(alpha, |a, &g| a.max(g));
    }
    let fit = fit_decay(&prof.influence).unwrap();
    assert!(alpha < 1.0);
    assert!(fit.slope <= alpha.ln() + 0.05, "slope {} vs ln alpha {}", fit.slope, alpha.ln());
}

#[test]
fn distributed_trigger_injection_is_persistent() {
    let model = small_model(13, 32);
    let mut rng = SeededRng::new(1);
    let scores: Vec<f64> = (0..1024).map(|_| rng.uniform()).collect();
    let hm = FrequencyHeatmap {
        height: 32,
        width: 32,
        scores,
        epsilon: 0.0,
        probe_count: 1,
    };
    let trig = generate_trigger(&build_mask(&hm, 5.0).unwrap(), &mut rng, 8.0 / 255.0, 3).unwrap();
    let img = random_images(2, model.config.image_len(), 14);
    let prof = influence_profile(&model, &img, 2, InfluenceMode::Distributed(&trig.delta), &ProbeOptions::default()).unwrap();
    assert_eq!(prof.seq_len, 64);
    let cv = coefficient_of_variation(&prof.influence).unwrap();
    assert!(cv < 1.0, "cv {cv}");
}

#[test]
fn decay_fit_and_cv_fixtures() {
    let geo: Vec<f64> = (0..10).map(|i| 3.0 * 0.8f64.powi(9 - i)).collect();
    let fit = fit_decay(&geo).unwrap();
    assert!((fit.slope - 0.8f64.ln()).abs() < 1e-12);
    assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-12);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
    assert!(fit_decay(&[1.0]).is_err());
    assert!((coefficient_of_variation(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap() - 0.4).abs() < 1e-15);
    assert_eq!(coefficient_of_variation(&[3.0; 5]).unwrap(), 0.0);
    assert!(coefficient_of_variation(&[]).is_err());
}

#[test]
fn profile_csv_export() {
    let dir = tempfile::tempdir().unwrap();
    let prof = InfluenceProfile {
        mode: "localized_gradient".into(),
        seq_len: 3,
        block: 0,
        probe_count: 1,
        gate_override: None,
        influence: vec![0.25, 0.5, 1.0],
    };
    let path = dir.path().join("p.csv");
    write_profile_csv(&prof, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text, "position,distance,influence\n1,2,2.5e-1\n2,1,5e-1\n3,0,1e0\n");
}
