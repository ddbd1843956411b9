//! Diagonal selective-scan kernel shared by the tape primitive and the
//! non-differentiable model paths.
//!
//! Per batch element, channel `c` and state slot `s`:
//!
//! ```text
//! gate[i]  = exp(-delta[i,c] * exp(a_log[c,s]))      (or a fixed override)
//! h[i]     = gate[i] * h[i-1] + delta[i,c] * x[i,c] * b[i,s]
//! y[i,c]   = sum_s c[i,s] * h[i] + d_skip[c] * x[i,c]
//! ```
//!
//! with `h[0] = 0`.

use super::Scalar;
use crate::error::{Error, Result};

/// Borrowed operands of one scan. Row-major layouts:
/// `x`, `delta`: `[batch*seq, d]`; `b`, `c`: `[batch*seq, n]`;
/// `a_log`: `[d, n]`; `d_skip`: `[d]`.
#[derive(Clone, Copy)]
pub struct ScanInputs<'a, T> {
    pub x: &'a [T],
    pub delta: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub a_log: &'a [T],
    pub d_skip: &'a [T],
    pub batch: usize,
    pub seq: usize,
    pub d: usize,
    pub n: usize,
    /// Replaces every forget-gate component with a constant.
    pub gate_override: Option<T>,
}

/// Forward results plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ScanCache<T> {
    /// `[batch*seq, d]`
    pub y: Vec<T>,
    /// `[batch, seq, d*n]`, the state after each step.
    pub states: Vec<T>,
    /// `[batch, seq, d*n]`
    pub gates: Vec<T>,
}

impl<T: Scalar> ScanCache<T> {
    /// Final state of batch element `b`, flattened `[d*n]`.
    pub fn final_state(&self, b: usize, seq: usize, dn: usize) -> &[T] {
        let off = (b * seq + seq - 1) * dn;
        &self.states[off..off + dn]
    }
}

/// Gradients of the scan operands.
#[derive(Debug, Clone)]
pub struct ScanGrads<T> {
    pub x: Vec<T>,
    pub delta: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub a_log: Vec<T>,
    pub d_skip: Vec<T>,
}

impl<'a, T: Scalar> ScanInputs<'a, T> {
    pub fn validate(&self) -> Result<()> {
        let rows = self.batch * self.seq;
        let check = |name: &'static str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    op: name,
                    left: vec![got],
                    right: vec![want],
                })
            }
        };
        if self.seq == 0 {
            return Err(Error::invalid("selective scan needs at least one step"));
        }
        check("scan.x", self.x.len(), rows * self.d)?;
        check("scan.delta", self.delta.len(), rows * self.d)?;
        check("scan.b", self.b.len(), rows * self.n)?;
        check("scan.c", self.c.len(), rows * self.n)?;
        check("scan.a_log", self.a_log.len(), self.d * self.n)?;
        check("scan.d_skip", self.d_skip.len(), self.d)
    }
}

pub fn scan_forward<T: Scalar>(inp: &ScanInputs<'_, T>) -> Result<ScanCache<T>> {
    inp.validate()?;
    let (d, n, seq) = (inp.d, inp.n, inp.seq);
    let dn = d * n;
    let rate: Vec<T> = inp.a_log.iter().map(|v| v.exp()).collect();
    let mut y = vec![T::zero(); inp.batch * seq * d];
    let mut states = vec![T::zero(); inp.batch * seq * dn];
    let mut gates = vec![T::zero(); inp.batch * seq * dn];
    for b in 0..inp.batch {
        for i in 0..seq {
            let row = b * seq + i;
            let cur = row * dn;
            let (done, rest) = states.split_at_mut(cur);
            let h = &mut rest[..dn];
            let prev: Option<&[T]> = if i > 0 { Some(&done[cur - dn..cur]) } else { None };
            let g = &mut gates[cur..cur + dn];
            let brow = &inp.b[row * n..(row + 1) * n];
            let crow = &inp.c[row * n..(row + 1) * n];
            let mut finite = true;
            for ch in 0..d {
                let dl = inp.delta[row * d + ch];
                let xv = inp.x[row * d + ch];
                let dx = dl * xv;
                let mut acc = T::zero();
                for s in 0..n {
                    let k = ch * n + s;
                    let a = match inp.gate_override {
                        Some(v) => v,
                        None => (-dl * rate[k]).exp(),
                    };
                    let hp = prev.map_or(T::zero(), |p| p[k]);
                    let hv = a * hp + dx * brow[s];
                    g[k] = a;
                    h[k] = hv;
                    acc = acc + crow[s] * hv;
                }
                let out = acc + inp.d_skip[ch] * xv;
                finite &= out.is_finite();
                y[row * d + ch] = out;
            }
            if !finite {
                return Err(Error::NonFinite {
                    context: "selective scan".into(),
                    step: i,
                });
            }
        }
    }
    Ok(ScanCache { y, states, gates })
}

/// Reverse pass. `gy` is `[batch*seq, d]`, `gfinal` is `[batch, d*n]`.
pub fn scan_backward<T: Scalar>(
    inp: &ScanInputs<'_, T>,
    cache: &ScanCache<T>,
    gy: &[T],
    gfinal: &[T],
) -> ScanGrads<T> {
    let (d, n, seq) = (inp.d, inp.n, inp.seq);
    let dn = d * n;
    let rate: Vec<T> = inp.a_log.iter().map(|v| v.exp()).collect();
    let mut gr = ScanGrads {
        x: vec![T::zero(); inp.x.len()],
        delta: vec![T::zero(); inp.delta.len()],
        b: vec![T::zero(); inp.b.len()],
        c: vec![T::zero(); inp.c.len()],
        a_log: vec![T::zero(); dn],
        d_skip: vec![T::zero(); d],
    };
    let mut gh = vec![T::zero(); dn];
    for b in 0..inp.batch {
        gh.copy_from_slice(&gfinal[b * dn..(b + 1) * dn]);
        for i in (0..seq).rev() {
            let row = b * seq + i;
            let cur = row * dn;
            let hs = &cache.states[cur..cur + dn];
            let gs = &cache.gates[cur..cur + dn];
            let prev = if i > 0 {
                Some(&cache.states[cur - dn..cur])
            } else {
                None
            };
            for ch in 0..d {
                let g_y = gy[row * d + ch];
                let xv = inp.x[row * d + ch];
                let dl = inp.delta[row * d + ch];
                gr.d_skip[ch] = gr.d_skip[ch] + g_y * xv;
                let mut gx = g_y * inp.d_skip[ch];
                let mut gdl = T::zero();
                for s in 0..n {
                    let k = ch * n + s;
                    let bs = inp.b[row * n + s];
                    let ghv = gh[k] + inp.c[row * n + s] * g_y;
                    gr.c[row * n + s] = gr.c[row * n + s] + g_y * hs[k];
                    gr.b[row * n + s] = gr.b[row * n + s] + ghv * dl * xv;
                    gx = gx + ghv * dl * bs;
                    gdl = gdl + ghv * xv * bs;
                    let a = gs[k];
                    if inp.gate_override.is_none() {
                        let hp = prev.map_or(T::zero(), |p| p[k]);
                        let ga = ghv * hp;
                        gdl = gdl - ga * rate[k] * a;
                        gr.a_log[k] = gr.a_log[k] - ga * dl * rate[k] * a;
                    }
                    gh[k] = ghv * a;
                }
                gr.x[row * d + ch] = gr.x[row * d + ch] + gx;
                gr.delta[row * d + ch] = gr.delta[row * d + ch] + gdl;
            }
        }
    }
    gr
}
