use serde::{Deserialize, Serialize};

use super::patch::patchify_batch;
use super::VimConfig;
use crate::error::{Error, Result};
use crate::numerics::scan::{scan_forward, ScanInputs};
use crate::numerics::{cross_entropy_per_sample, matmul_into, softplus, Scalar, SeededRng, Tape, Tensor, Var};

/// One selective-SSM block with a diagonal state matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SsmBlock<T: Scalar> {
    /// `[d, n]`; the decay rate is `exp(a_log) > 0`.
    pub a_log: Tensor<T>,
    /// `[d, d]`, input to step-size pre-activation.
    pub w_delta: Tensor<T>,
    /// `[d]`
    pub b_delta: Tensor<T>,
    /// `[d, n]`
    pub w_b: Tensor<T>,
    /// `[d, n]`
    pub w_c: Tensor<T>,
    /// `[d]` skip connection.
    pub d_skip: Tensor<T>,
}

/// Patch embedding, a stack of SSM blocks joined by residual adds, and a
/// linear head over the last block's flattened final state.
#[derive(Debug, Clone, PartialEq)]
pub struct VimModel<T: Scalar> {
    pub config: VimConfig,
    /// `[P*P*C, d]`
    pub patch_w: Tensor<T>,
    /// `[d]`
    pub patch_b: Tensor<T>,
    pub blocks: Vec<SsmBlock<T>>,
    /// `[d*n, classes]`
    pub head_w: Tensor<T>,
    /// `[classes]`
    pub head_b: Tensor<T>,
    /// Forces every forget-gate component to this constant (probes only).
    pub gate_override: Option<f64>,
}

/// Initialization ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Step sizes are drawn log-uniformly from this range.
    pub delta_range: (f64, f64),
    pub head_scale: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            delta_range: (1e-3, 1e-1),
            head_scale: 1.0,
        }
    }
}

/// Per-step hidden states of one block for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace<T> {
    /// `states[i]` is h(i+1), flattened `[d*n]`.
    pub states: Vec<Vec<T>>,
}

impl<T: Scalar> HiddenTrace<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &[T] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Tape handles for every parameter, in [`VimModel::param_names`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

const BLOCK_PARAMS: usize = 6;

/// Tape handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct TapeForward {
    /// `[batch, classes]`
    pub logits: Var,
    /// g(x): last block's h(N), `[batch, d*n]`.
    pub final_state: Var,
    /// Input tokens of each block, `[batch*N, d]`.
    pub block_inputs: Vec<Var>,
}

/// Plain-value forward results for a batch.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// `[batch, classes]`
    pub logits: Vec<T>,
    /// `[batch, d*n]`
    pub final_state: Vec<T>,
}

fn gaussian_tensor<T: Scalar>(rng: &mut SeededRng, shape: Vec<usize>, std: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gaussian() * std)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<T: Scalar> SsmBlock<T> {
    fn random(d: usize, n: usize, rng: &mut SeededRng, opts: &InitOptions) -> Self {
        let a_log = (0..d * n).map(|k| T::lit(((k % n) as f64 + 1.0).ln())).collect();
        let (lo, hi) = opts.delta_range;
        let b_delta = (0..d)
            .map(|_| {
                let dt = (lo.ln() + rng.uniform() * (hi.ln() - lo.ln())).exp();
                T::lit(inverse_softplus(dt))
            })
            .collect();
        let sd = 1.0 / (d as f64).sqrt();
        Self {
            a_log: Tensor::new(vec![d, n], a_log).expect("a_log"),
            w_delta: gaussian_tensor(rng, vec![d, d], 0.1 * sd),
            b_delta: Tensor::new(vec![d], b_delta).expect("b_delta"),
            w_b: gaussian_tensor(rng, vec![d, n], sd),
            w_c: gaussian_tensor(rng, vec![d, n], sd),
            d_skip: Tensor::full(vec![d], T::one()),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a_log.shape()[0], self.a_log.shape()[1])
    }

    fn tensors(&self) -> [&Tensor<T>; BLOCK_PARAMS] {
        [&self.a_log, &self.w_delta, &self.b_delta, &self.w_b, &self.w_c, &self.d_skip]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; BLOCK_PARAMS] {
        [
            &mut self.a_log,
            &mut self.w_delta,
            &mut self.b_delta,
            &mut self.w_b,
            &mut self.w_c,
            &mut self.d_skip,
        ]
    }

    /// Step sizes, input projections and readout projections for a token
    /// sequence `[N, d]`: `(delta [N,d], b [N,n], c [N,n])`.
    pub fn projections(&self, tokens: &Tensor<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        let (d, n) = self.dims();
        let rows = tokens.len() / d;
        if tokens.len() != rows * d || rows == 0 {
            return Err(Error::ShapeMismatch {
                op: "ssm projections",
                left: tokens.shape().to_vec(),
                right: vec![rows, d],
            });
        }
        let x = tokens.data();
        let mut pre = vec![T::zero(); rows * d];
        matmul_into(x, self.w_delta.data(), &mut pre, rows, d, d);
        let delta = pre
            .chunks(d)
            .flat_map(|row| row.iter().zip(self.b_delta.data()).map(|(&v, &b)| softplus(v + b)))
            .collect();
        let mut bm = vec![T::zero(); rows * n];
        matmul_into(x, self.w_b.data(), &mut bm, rows, d, n);
        let mut cm = vec![T::zero(); rows * n];
        matmul_into(x, self.w_c.data(), &mut cm, rows, d, n);
        Ok((delta, bm, cm))
    }

    /// Forget gates and state injections per step, each `[N, d*n]`:
    /// `gate = exp(-delta (x) exp(a_log))`, `inject = (delta * x) (x) b`.
    pub fn gates_and_injections(&self, tokens: &Tensor<T>, gate_override: Option<T>) -> Result<(Vec<T>, Vec<T>)> {
        let (d, n) = self.dims();
        let (delta, bm, _) = self.projections(tokens)?;
        let rows = tokens.len() / d;
        let mut gates = vec![T::zero(); rows * d * n];
        let mut inj = vec![T::zero(); rows * d * n];
        for i in 0..rows {
            for c in 0..d {
                let dl = delta[i * d + c];
                let dx = dl * tokens.data()[i * d + c];
                for s in 0..n {
                    let k = i * d * n + c * n + s;
                    gates[k] = gate_override.unwrap_or_else(|| (-dl * self.a_log.data()[c * n + s].exp()).exp());
                    inj[k] = dx * bm[i * n + s];
                }
            }
        }
        Ok((gates, inj))
    }
}

/// Runs one block's recurrence over a single token sequence `[N, d]`,
/// returning the outputs `[N, d]` and every hidden state.
pub fn ssm_scan<T: Scalar>(tokens: &Tensor<T>, block: &SsmBlock<T>, gate_override: Option<T>) -> Result<(Tensor<T>, HiddenTrace<T>)> {
    let (d, n) = block.dims();
    let seq = tokens.len() / d;
    let (delta, bm, cm) = block.projections(tokens)?;
    let cache = scan_forward(&ScanInputs {
        x: tokens.data(),
        delta: &delta,
        b: &bm,
        c: &cm,
        a_log: block.a_log.data(),
        d_skip: block.d_skip.data(),
        batch: 1,
        seq,
        d,
        n,
        gate_override,
    })?;
    let states = cache.states.chunks(d * n).map(<[T]>::to_vec).collect();
    Ok((Tensor::new(vec![seq, d], cache.y)?, HiddenTrace { states }))
}

impl<T: Scalar> VimModel<T> {
    pub fn random(config: VimConfig, seed: u64) -> Result<Self> {
        Self::random_with(config, seed, &InitOptions::default())
    }

    pub fn random_with(config: VimConfig, seed: u64, opts: &InitOptions) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::substream(seed, "model-init", 0);
        let (pd, d, n) = (config.patch_dim(), config.embed_dim, config.state_dim);
        let patch_w = gaussian_tensor(&mut rng, vec![pd, d], 1.0 / (pd as f64).sqrt());
        let blocks = (0..config.num_blocks)
            .map(|_| SsmBlock::random(d, n, &mut rng, opts))
            .collect();
        let head_w = gaussian_tensor(
            &mut rng,
            vec![d * n, config.num_classes],
            opts.head_scale / ((d * n) as f64).sqrt(),
        );
        Ok(Self {
            config,
            patch_w,
            patch_b: Tensor::zeros(vec![d]),
            blocks,
            head_w,
            head_b: Tensor::zeros(vec![config.num_classes]),
            gate_override: None,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["patch.weight".to_string(), "patch.bias".to_string()];
        for i in 0..self.blocks.len() {
            for p in ["a_log", "w_delta", "b_delta", "w_b", "w_c", "d_skip"] {
                names.push(format!("blocks.{i}.{p}"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.patch_w, &self.patch_b];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.patch_w, &mut self.patch_b];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Copy at another precision.
    pub fn cast<U: Scalar>(&self) -> VimModel<U> {
        VimModel {
            config: self.config,
            patch_w: self.patch_w.cast(),
            patch_b: self.patch_b.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| SsmBlock {
                    a_log: b.a_log.cast(),
                    w_delta: b.w_delta.cast(),
                    b_delta: b.b_delta.cast(),
                    w_b: b.w_b.cast(),
                    w_c: b.w_c.cast(),
                    d_skip: b.d_skip.cast(),
                })
                .collect(),
            head_w: self.head_w.cast(),
            head_b: self.head_b.cast(),
            gate_override: self.gate_override,
        }
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        BoundParams {
            vars: self.params().into_iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
        }
    }

    /// Forward pass from patch tokens `[batch*N, P*P*C]`.
    pub fn forward_tape(&self, tape: &mut Tape<T>, bound: &BoundParams, patches: Var) -> Result<TapeForward> {
        let cfg = &self.config;
        let rows = tape.shape(patches)[0];
        let seq = cfg.num_patches();
        let batch = rows / seq;
        if batch * seq != rows {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: tape.shape(patches).to_vec(),
                right: vec![seq, cfg.patch_dim()],
            });
        }
        let v = &bound.vars;
        let emb = tape.matmul(patches, v[0])?;
        let mut x = tape.add_row(emb, v[1])?;
        let gate = self.gate_override.map(T::lit);
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut final_state = None;
        for i in 0..self.blocks.len() {
            block_inputs.push(x);
            let p = &v[2 + i * BLOCK_PARAMS..2 + (i + 1) * BLOCK_PARAMS];
            let pre = tape.matmul(x, p[1])?;
            let pre = tape.add_row(pre, p[2])?;
            let delta = tape.softplus(pre)?;
            let bm = tape.matmul(x, p[3])?;
            let cm = tape.matmul(x, p[4])?;
            let (y, fin) = tape.selective_scan(x, delta, bm, cm, p[0], p[5], batch, seq, gate)?;
            x = tape.add(x, y)?;
            final_state = Some(fin);
        }
        let final_state = final_state.expect("at least one block");
        let head = 2 + self.blocks.len() * BLOCK_PARAMS;
        let logits = tape.matmul(final_state, v[head])?;
        let logits = tape.add_row(logits, v[head + 1])?;
        Ok(TapeForward {
            logits,
            final_state,
            block_inputs,
        })
    }

    /// Records a batch of `f32` images as constant patch tokens.
    pub fn patches_on_tape(&self, tape: &mut Tape<T>, images: &[f32], count: usize) -> Result<Var> {
        Ok(tape.constant(patchify_batch(images, count, &self.config)?))
    }

    /// Inference over `count` images stored back to back.
    pub fn forward(&self, images: &[f32], count: usize) -> Result<Forward<T>> {
        const CHUNK: usize = 64;
        let il = self.config.image_len();
        if images.len() != count * il {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: vec![images.len()],
                right: vec![count, il],
            });
        }
        let mut out = Forward {
            logits: Vec::with_capacity(count * self.config.num_classes),
            final_state: Vec::with_capacity(count * self.config.state_len()),
        };
        for (ci, chunk) in images.chunks(CHUNK * il).enumerate() {
            let b = chunk.len() / il;
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let p = self.patches_on_tape(&mut tape, chunk, b)?;
            let f = self.forward_tape(&mut tape, &bound, p).map_err(|e| match e {
                Error::NonFinite { context, step } => Error::NonFinite {
                    context: format!("{context} (batch chunk {ci})"),
                    step,
                },
                other => other,
            })?;
            out.logits.extend_from_slice(tape.value(f.logits).data());
            out.final_state.extend_from_slice(tape.value(f.final_state).data());
        }
        Ok(out)
    }

    /// Final state g(x) of the last block for each image, `[count, d*n]`.
    pub fn hidden_state(&self, images: &[f32], count: usize) -> Result<Vec<T>> {
        Ok(self.forward(images, count)?.final_state)
    }

    pub fn predict(&self, images: &[f32], count: usize) -> Result<Vec<usize>> {
        let logits = self.forward(images, count)?.logits;
        Ok(argmax_rows(&logits, self.config.num_classes))
    }

    /// Cross-entropy of every image against its label.
    pub fn per_sample_loss(&self, images: &[f32], labels: &[usize]) -> Result<Vec<T>> {
        let logits = self.forward(images, labels.len())?.logits;
        Ok(cross_entropy_per_sample(&logits, self.config.num_classes, labels))
    }
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows<T: Scalar>(values: &[T], width: usize) -> Vec<usize> {
    values
        .chunks(width)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
