use proptest::prelude::*;

use ssm_backdoor::model::*;
use ssm_backdoor::numerics::gradcheck::{central_difference_at, tensor_relative_error};
use ssm_backdoor::numerics::{SeededRng, Tape, Tensor};

fn small_config() -> VimConfig {
    VimConfig {
        height: 8,
        width: 8,
        channels: 2,
        patch_size: 4,
        embed_dim: 4,
        state_dim: 3,
        num_blocks: 2,
        num_classes: 3,
    }
}

fn random_tokens(rng: &mut SeededRng, seq: usize, d: usize) -> Tensor<f64> {
    Tensor::new(vec![seq, d], (0..seq * d).map(|_| rng.gaussian()).collect()).unwrap()
}

fn random_images(rng: &mut SeededRng, count: usize, cfg: &VimConfig) -> Vec<f32> {
    (0..count * cfg.image_len()).map(|_| rng.uniform() as f32).collect()
}

#[test]
fn single_patch_is_flattened_image() {
    let cfg = VimConfig { height: 4, width: 4, channels: 1, ..small_config() };
    let img: Vec<f64> = (0..16).map(f64::from).collect();
    let p = patchify(&img, &cfg).unwrap();
    assert_eq!(p.shape(), &[1, 16]);
    assert_eq!(p.data(), img.as_slice());
}

#[test]
fn first_patch_is_top_left_block() {
    let cfg = VimConfig { channels: 1, ..small_config() };
    let img: Vec<f64> = (0..64).map(f64::from).collect();
    let p = patchify(&img, &cfg).unwrap();
    assert_eq!(p.shape(), &[4, 16]);
    let expect: Vec<f64> = (0..4).flat_map(|r| (0..4).map(move |c| (r * 8 + c) as f64)).collect();
    assert_eq!(&p.data()[..16], expect.as_slice());
    // raster order: patch 1 starts at column 4
    assert_eq!(p.data()[16], 4.0);
    assert_eq!(p.data()[32], 32.0);
}

#[test]
fn patchify_round_trip_32x32x3() {
    let cfg = VimConfig::for_images(32, 32, 3, 10);
    let mut rng = SeededRng::new(4);
    let img: Vec<f64> = (0..cfg.image_len()).map(|_| rng.uniform()).collect();
    let p = patchify(&img, &cfg).unwrap();
    assert_eq!(p.shape(), &[64, 48]);
    assert_eq!(unpatchify(&p, &cfg).unwrap(), img);
}

#[test]
fn patchify_rejects_indivisible_extents() {
    let cfg = VimConfig { height: 10, ..small_config() };
    assert!(patchify(&vec![0.0f64; 10 * 8 * 2], &cfg).is_err());
}

fn random_block(rng: &mut SeededRng, d: usize, n: usize) -> SsmBlock<f64> {
    let cfg = VimConfig { embed_dim: d, state_dim: n, num_blocks: 1, ..small_config() };
    let mut m = VimModel::<f64>::random(cfg, rng.next_u64()).unwrap();
    let mut b = m.blocks.remove(0);
    // larger, varied step sizes so the gates are far from 1
    for v in b.b_delta.data_mut() {
        *v = rng.gaussian();
    }
    for v in b.w_delta.data_mut() {
        *v = 0.5 * rng.gaussian();
    }
    b
}

#[test]
fn first_step_is_pure_injection() {
    let mut rng = SeededRng::new(1);
    let (d, n) = (3, 2);
    let block = random_block(&mut rng, d, n);
    let x = random_tokens(&mut rng, 1, d);
    let (_, trace) = ssm_scan(&x, &block, None).unwrap();
    let (delta, bm, _) = block.projections(&x).unwrap();
    for c in 0..d {
        for s in 0..n {
            let want = bm[s] * (delta[c] * x.data()[c]);
            assert!((trace.final_state()[c * n + s] - want).abs() < 1e-15);
        }
    }
}

#[test]
fn unit_gates_accumulate_linearly() {
    let (d, n, seq) = (2, 2, 7);
    let mut rng = SeededRng::new(2);
    let block = random_block(&mut rng, d, n);
    // identical tokens give identical per-step increments c
    let row: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
    let x = Tensor::new(vec![seq, d], row.repeat(seq)).unwrap();
    let (_, trace) = ssm_scan(&x, &block, Some(1.0)).unwrap();
    let (_, inj) = block.gates_and_injections(&x, Some(1.0)).unwrap();
    for k in 0..d * n {
        assert!((trace.final_state()[k] - seq as f64 * inj[k]).abs() < 1e-12);
    }
    assert_eq!(trace.len(), seq);
}

/// Independent oracle: rebuilds gates and injections from the raw block
/// parameters and expands h(N) = sum_i (prod_{j>i} gate_j) * inject_i.
fn unrolled_oracle(block: &SsmBlock<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let (d, n) = block.dims();
    let seq = x.len() / d;
    let xs = x.data();
    let sp = |v: f64| (1.0 + v.exp()).ln();
    let mut gates = vec![vec![0.0; d * n]; seq];
    let mut inj = vec![vec![0.0; d * n]; seq];
    for i in 0..seq {
        for c in 0..d {
            let mut pre = block.b_delta.data()[c];
            for k in 0..d {
                pre += xs[i * d + k] * block.w_delta.data()[k * d + c];
            }
            let dt = sp(pre);
            for s in 0..n {
                let mut bv = 0.0;
                for k in 0..d {
                    bv += xs[i * d + k] * block.w_b.data()[k * n + s];
                }
                gates[i][c * n + s] = (-dt * block.a_log.data()[c * n + s].exp()).exp();
                inj[i][c * n + s] = bv * dt * xs[i * d + c];
            }
        }
    }
    (0..d * n)
        .map(|k| {
            (0..seq)
                .map(|i| {
                    let decay: f64 = (i + 1..seq).map(|j| gates[j][k]).product();
                    decay * inj[i][k]
                })
                .sum()
        })
        .collect()
}

#[test]
fn scan_matches_unrolled_oracle() {
    let mut rng = SeededRng::new(3);
    let block = random_block(&mut rng, 4, 3);
    let x = random_tokens(&mut rng, 3, 4);
    let (_, trace) = ssm_scan(&x, &block, None).unwrap();
    let want = unrolled_oracle(&block, &x);
    for (a, b) in trace.final_state().iter().zip(&want) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scan_equals_unroll_up_to_16(seed in 0u64..10_000, seq in 1usize..=16) {
        let mut rng = SeededRng::new(seed);
        let block = random_block(&mut rng, 3, 2);
        let x = random_tokens(&mut rng, seq, 3);
        let (_, trace) = ssm_scan(&x, &block, None).unwrap();
        for (a, b) in trace.final_state().iter().zip(unrolled_oracle(&block, &x)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forget_gates_lie_in_unit_interval(seed in 0u64..10_000) {
        let mut rng = SeededRng::new(seed);
        let block = random_block(&mut rng, 4, 3);
        let x = random_tokens(&mut rng, 6, 4);
        let scaled = Tensor::new(vec![6, 4], x.data().iter().map(|v| v * 3.0).collect()).unwrap();
        let (gates, _) = block.gates_and_injections(&scaled, None).unwrap();
        prop_assert!(gates.iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn scan_is_causal(seed in 0u64..10_000, j in 0usize..8) {
        let mut rng = SeededRng::new(seed);
        let block = random_block(&mut rng, 3, 2);
        let x = random_tokens(&mut rng, 8, 3);
        let mut y = x.clone();
        y.data_mut()[j * 3 + 1] += 0.7;
        let (_, a) = ssm_scan(&x, &block, None).unwrap();
        let (_, b) = ssm_scan(&y, &block, None).unwrap();
        for i in 0..j {
            prop_assert_eq!(&a.states[i], &b.states[i]);
        }
        prop_assert_ne!(&a.states[j], &b.states[j]);
    }
}

/// Frobenius norm of d h(N) / d x(i) for every position i, via the tape.
fn jacobian_norms(block: &SsmBlock<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let (d, n) = block.dims();
    let seq = x.len() / d;
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let params: Vec<_> = [&block.a_log, &block.w_delta, &block.b_delta, &block.w_b, &block.w_c, &block.d_skip]
        .iter()
        .map(|t| tape.constant((*t).clone()))
        .collect();
    let pre = tape.matmul(xv, params[1]).unwrap();
    let pre = tape.add_row(pre, params[2]).unwrap();
    let delta = tape.softplus(pre).unwrap();
    let bm = tape.matmul(xv, params[3]).unwrap();
    let cm = tape.matmul(xv, params[4]).unwrap();
    let (_, fin) = tape
        .selective_scan(xv, delta, bm, cm, params[0], params[5], 1, seq, None)
        .unwrap();
    let mut sq = vec![0.0; seq];
    for k in 0..d * n {
        let comp = tape.slice(fin, k, vec![1]).unwrap();
        let s = tape.sum(comp).unwrap();
        tape.reset_grads();
        tape.backward(s).unwrap();
        let g = tape.grad(xv).unwrap();
        for i in 0..seq {
            sq[i] += g[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>();
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

#[test]
fn influence_decays_with_distance_from_the_end() {
    let mut rng = SeededRng::new(77);
    let block = random_block(&mut rng, 4, 3);
    let seq = 8;
    let mut mean = vec![0.0; seq];
    let trials = 120;
    for _ in 0..trials {
        let x = random_tokens(&mut rng, seq, 4);
        for (m, v) in mean.iter_mut().zip(jacobian_norms(&block, &x)) {
            *m += v / trials as f64;
        }
    }
    // distance N - i grows as i shrinks, so the mean must not increase
    for i in 1..seq {
        assert!(mean[i - 1] <= mean[i], "position {i}: {mean:?}");
    }
}

#[test]
fn zero_image_gives_equal_logits() {
    let cfg = small_config();
    let model = VimModel::<f64>::random(cfg, 9).unwrap();
    let img = vec![0.0f32; cfg.image_len()];
    let f = model.forward(&img, 1).unwrap();
    assert!(f.logits.iter().all(|&l| l == f.logits[0]));
}

#[test]
fn identical_images_give_identical_outputs() {
    let cfg = small_config();
    let model = VimModel::<f32>::random(cfg, 10).unwrap();
    let mut rng = SeededRng::new(10);
    let one = random_images(&mut rng, 1, &cfg);
    let two = [one.clone(), one].concat();
    let f = model.forward(&two, 2).unwrap();
    let (k, s) = (cfg.num_classes, cfg.state_len());
    assert_eq!(f.logits[..k], f.logits[k..]);
    assert_eq!(f.final_state[..s], f.final_state[s..]);
}

fn ce_loss(model: &VimModel<f64>, images: &[f32], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let p = model.patches_on_tape(&mut tape, images, labels.len()).unwrap();
    let f = model.forward_tape(&mut tape, &bound, p).unwrap();
    let l = tape.cross_entropy(f.logits, labels).unwrap();
    tape.backward(l).unwrap();
    let grads = bound.vars.iter().map(|v| tape.grad(*v).unwrap().to_vec()).collect();
    (tape.value(l).data()[0], grads)
}

#[test]
fn cross_entropy_gradients_match_finite_differences() {
    let cfg = small_config();
    let mut model = VimModel::<f64>::random(cfg, 12).unwrap();
    let mut rng = SeededRng::new(12);
    for v in model.head_w.data_mut() {
        *v *= 5.0;
    }
    let images = random_images(&mut rng, 2, &cfg);
    let labels = [2, 0];
    let (_, grads) = ce_loss(&model, &images, &labels);
    let mut worst = 0.0f64;
    for (pi, g) in grads.iter().enumerate() {
        let mut flat = model.params()[pi].to_f64_vec();
        let mut numeric = Vec::with_capacity(flat.len());
        let mut f = |p: &[f64]| {
            let mut m = model.clone();
            m.params_mut()[pi].data_mut().copy_from_slice(p);
            m.per_sample_loss(&images, &labels).unwrap().iter().sum::<f64>() / 2.0
        };
        for j in 0..flat.len() {
            let num = central_difference_at(&mut f, &mut flat, j, 1e-5);
            numeric.push(num);
        }
        worst = worst.max(tensor_relative_error(g, &numeric));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn checkpoint_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let m32 = VimModel::<f32>::random(cfg, 5).unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&m32, &path).unwrap();
    assert_eq!(load_checkpoint::<f32>(&path).unwrap(), m32);
    let m64 = VimModel::<f64>::random(cfg, 6).unwrap();
    save_checkpoint(&m64, &path).unwrap();
    assert_eq!(load_checkpoint::<f64>(&path).unwrap(), m64);
}

#[test]
fn checkpoint_rejects_mismatched_tensor() {
    let cfg = small_config();
    let m = VimModel::<f32>::random(cfg, 5).unwrap();
    let mut ck = Checkpoint::from_model(&m);
    ck.tensors[3].shape = vec![1];
    assert!(ck.into_model::<f32>().is_err());
}

#[test]
fn default_config_shapes() {
    let cfg = VimConfig::for_images(32, 32, 3, 2);
    assert_eq!(cfg.num_patches(), 64);
    let m = VimModel::<f32>::random(cfg, 0).unwrap();
    assert_eq!(m.param_names().len(), m.params().len());
    assert_eq!(m.head_w.shape(), &[256, 2]);
}
