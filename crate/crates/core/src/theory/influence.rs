use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{patchify, ssm_scan, VimModel};
use crate::numerics::{matmul_into, SeededRng, Tape, Tensor};

/// How a localized influence is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceMethod {
    /// Frobenius norm of `∂h(N)/∂x(i)` from the tape.
    Gradient,
    /// `‖h(x + s r e_i) − h(x − s r e_i)‖ / 2s` along a fixed unit token
    /// direction `r`.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy)]
pub enum InfluenceMode<'a> {
    /// Sensitivity of the final state to one token at a time.
    Localized(InfluenceMethod),
    /// Per-step injected magnitude `‖(Δ(i) ⊙ δ_tok(i)) ⊗ B(i)‖` of a
    /// full-image perturbation `δ` (`[H, W, C]`).
    Distributed(&'a Tensor<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// Block whose input tokens and final state are analyzed.
    pub block: usize,
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            block: 0,
            fd_step: 1e-5,
            seed: 0,
        }
    }
}

/// Mean influence per position `i = 1..N`, averaged over probe images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceProfile {
    pub mode: String,
    pub seq_len: usize,
    pub block: usize,
    pub probe_count: usize,
    pub gate_override: Option<f64>,
    pub influence: Vec<f64>,
}

/// Input tokens `[N, d]` of block `block` for one image.
pub fn block_inputs(model: &VimModel<f64>, image: &[f64], block: usize) -> Result<Tensor<f64>> {
    let cfg = &model.config;
    if block >= model.blocks.len() {
        return Err(Error::invalid(format!("block {block} of {}", model.blocks.len())));
    }
    let patches = patchify(image, cfg)?;
    let (n, pd, d) = (cfg.num_patches(), cfg.patch_dim(), cfg.embed_dim);
    let mut x = vec![0.0; n * d];
    matmul_into(patches.data(), model.patch_w.data(), &mut x, n, pd, d);
    for row in x.chunks_mut(d) {
        row.iter_mut().zip(model.patch_b.data()).for_each(|(v, b)| *v += b);
    }
    let mut tokens = Tensor::new(vec![n, d], x)?;
    for blk in &model.blocks[..block] {
        let (y, _) = ssm_scan(&tokens, blk, model.gate_override)?;
        tokens.data_mut().iter_mut().zip(y.data()).for_each(|(a, b)| *a += b);
    }
    Ok(tokens)
}

/// Jacobian of block `block`'s final state with respect to its input
/// tokens, `[d*n, N, d]`, one reverse pass per state component.
pub fn final_state_jacobian(model: &VimModel<f64>, tokens: &Tensor<f64>, block: usize) -> Result<Vec<f64>> {
    let blk = &model.blocks[block];
    let (d, n) = blk.dims();
    let seq = tokens.len() / d;
    let mut tape = Tape::new();
    let x = tape.param(tokens.clone());
    let c = |tape: &mut Tape<f64>, t: &Tensor<f64>| tape.constant(t.clone());
    let (w_delta, b_delta, w_b, w_c, a_log, d_skip) = (
        c(&mut tape, &blk.w_delta),
        c(&mut tape, &blk.b_delta),
        c(&mut tape, &blk.w_b),
        c(&mut tape, &blk.w_c),
        c(&mut tape, &blk.a_log),
        c(&mut tape, &blk.d_skip),
    );
    let pre = tape.matmul(x, w_delta)?;
    let pre = tape.add_row(pre, b_delta)?;
    let delta = tape.softplus(pre)?;
    let bm = tape.matmul(x, w_b)?;
    let cm = tape.matmul(x, w_c)?;
    let (_, fin) = tape.selective_scan(x, delta, bm, cm, a_log, d_skip, 1, seq, model.gate_override)?;
    let dn = d * n;
    let picks = (0..dn)
        .map(|k| {
            let s = tape.slice(fin, k, vec![1])?;
            tape.sum(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut jac = Vec::with_capacity(dn * seq * d);
    for pick in picks {
        tape.reset_grads();
        tape.backward(pick)?;
        jac.extend_from_slice(tape.grad(x).ok_or_else(|| Error::Backward("token gradient missing".into()))?);
    }
    Ok(jac)
}

fn final_state(model: &VimModel<f64>, tokens: &Tensor<f64>, block: usize) -> Result<Vec<f64>> {
    let (_, trace) = ssm_scan(tokens, &model.blocks[block], model.gate_override)?;
    Ok(trace.final_state().to_vec())
}

fn localized(model: &VimModel<f64>, tokens: &Tensor<f64>, method: InfluenceMethod, opts: &ProbeOptions) -> Result<Vec<f64>> {
    let d = model.config.embed_dim;
    let seq = tokens.len() / d;
    match method {
        InfluenceMethod::Gradient => {
            let jac = final_state_jacobian(model, tokens, opts.block)?;
            let mut sq = vec![0.0; seq];
            for row in jac.chunks(seq * d) {
                for (i, g) in row.chunks(d).enumerate() {
                    sq[i] += g.iter().map(|v| v * v).sum::<f64>();
                }
            }
            Ok(sq.into_iter().map(f64::sqrt).collect())
        }
        InfluenceMethod::FiniteDifference => {
            let mut rng = SeededRng::substream(opts.seed, "influence-direction", 0);
            let mut dir: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v /= norm);
            let s = opts.fd_step;
            (0..seq)
                .map(|i| {
                    let mut plus = tokens.clone();
                    let mut minus = tokens.clone();
                    for k in 0..d {
                        plus.data_mut()[i * d + k] += s * dir[k];
                        minus.data_mut()[i * d + k] -= s * dir[k];
                    }
                    let hp = final_state(model, &plus, opts.block)?;
                    let hm = final_state(model, &minus, opts.block)?;
                    Ok(hp.iter().zip(&hm).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / (2.0 * s))
                })
                .collect()
        }
    }
}

fn distributed(model: &VimModel<f64>, image: &[f64], tokens: &Tensor<f64>, delta: &Tensor<f64>, opts: &ProbeOptions) -> Result<Vec<f64>> {
    if delta.len() != image.len() {
        return Err(Error::ShapeMismatch {
            op: "influence_profile",
            left: delta.shape().to_vec(),
            right: vec![image.len()],
        });
    }
    let shifted: Vec<f64> = image.iter().zip(delta.data()).map(|(a, b)| a + b).collect();
    let moved = block_inputs(model, &shifted, opts.block)?;
    let blk = &model.blocks[opts.block];
    let (d, n) = blk.dims();
    let (step, bm, _) = blk.projections(tokens)?;
    Ok((0..tokens.len() / d)
        .map(|i| {
            let scaled: f64 = (0..d)
                .map(|c| (step[i * d + c] * (moved.data()[i * d + c] - tokens.data()[i * d + c])).powi(2))
                .sum();
            let b: f64 = bm[i * n..(i + 1) * n].iter().map(|v| v * v).sum();
            // ‖u ⊗ v‖ = ‖u‖ ‖v‖
            (scaled * b).sqrt()
        })
        .collect())
}

/// Per-position influence averaged over `count` probe images.
pub fn influence_profile(
    model: &VimModel<f64>,
    images: &[f32],
    count: usize,
    mode: InfluenceMode<'_>,
    opts: &ProbeOptions,
) -> Result<InfluenceProfile> {
    let il = model.config.image_len();
    if count == 0 || images.len() != count * il {
        return Err(Error::invalid("influence probe needs at least one image of the model's shape"));
    }
    let seq = model.config.num_patches();
    let mut total = vec![0.0; seq];
    for img in images.chunks(il) {
        let image: Vec<f64> = img.iter().map(|&v| v as f64).collect();
        let tokens = block_inputs(model, &image, opts.block)?;
        let row = match mode {
            InfluenceMode::Localized(method) => localized(model, &tokens, method, opts)?,
            InfluenceMode::Distributed(delta) => distributed(model, &image, &tokens, delta, opts)?,
        };
        total.iter_mut().zip(row).for_each(|(t, r)| *t += r);
    }
    let label = match mode {
        InfluenceMode::Localized(InfluenceMethod::Gradient) => "localized_gradient",
        InfluenceMode::Localized(InfluenceMethod::FiniteDifference) => "localized_finite_difference",
        InfluenceMode::Distributed(_) => "distributed",
    };
    Ok(InfluenceProfile {
        mode: label.into(),
        seq_len: seq,
        block: opts.block,
        probe_count: count,
        gate_override: model.gate_override,
        influence: total.into_iter().map(|t| t / count as f64).collect(),
    })
}

/// Least-squares line through `(N − i, ln I(i))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits the log-influence decay; positions with zero influence are skipped.
pub fn fit_decay(influence: &[f64]) -> Result<DecayFit> {
    let n = influence.len();
    let pts: Vec<(f64, f64)> = influence
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(i, &v)| ((n - 1 - i) as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::invalid("decay fit needs two positive influences"));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(DecayFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: pts.len(),
    })
}

/// Population standard deviation over mean.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("coefficient of variation of nothing"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::ZeroDenominator { step: 0 });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean.abs())
}

/// CSV `position,distance,influence` with 1-based positions.
pub fn write_profile_csv(profile: &InfluenceProfile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(out, "position,distance,influence").map_err(io)?;
    let n = profile.influence.len();
    for (i, v) in profile.influence.iter().enumerate() {
        writeln!(out, "{},{},{:e}", i + 1, n - 1 - i, v).map_err(io)?;
    }
    out.flush().map_err(io)
}
