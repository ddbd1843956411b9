use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running sums of causal linear attention: `S = Σ kᵀv` (`[dk, dv]`) and
/// `Z = Σ kᵀ` (`[dk]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAttentionState {
    pub dk: usize,
    pub dv: usize,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
}

impl LinearAttentionState {
    pub fn new(dk: usize, dv: usize) -> Self {
        Self {
            dk,
            dv,
            s: vec![0.0; dk * dv],
            z: vec![0.0; dk],
        }
    }

    pub fn push(&mut self, k: &[f64], v: &[f64]) {
        for (a, &ka) in k.iter().enumerate() {
            self.z[a] += ka;
            for (b, &vb) in v.iter().enumerate() {
                self.s[a * self.dv + b] += ka * vb;
            }
        }
    }

    /// `q S / (q Z)`; `None` when the denominator is zero or not finite.
    pub fn read(&self, q: &[f64]) -> Option<Vec<f64>> {
        let den: f64 = q.iter().zip(&self.z).map(|(a, b)| a * b).sum();
        if den == 0.0 || !den.is_finite() {
            return None;
        }
        Some(
            (0..self.dv)
                .map(|b| (0..self.dk).map(|a| q[a] * self.s[a * self.dv + b]).sum::<f64>() / den)
                .collect(),
        )
    }
}

fn check(q: &[f64], k: &[f64], v: &[f64], steps: usize, dk: usize, dv: usize) -> Result<()> {
    if q.len() != steps * dk || k.len() != steps * dk || v.len() != steps * dv {
        return Err(Error::ShapeMismatch {
            op: "linear_attention",
            left: vec![q.len(), k.len(), v.len()],
            right: vec![steps, dk, dv],
        });
    }
    Ok(())
}

/// Recurrent form: outputs `[steps, dv]`.
pub fn linear_attention_scan(q: &[f64], k: &[f64], v: &[f64], steps: usize, dk: usize, dv: usize) -> Result<Vec<f64>> {
    check(q, k, v, steps, dk, dv)?;
    let mut state = LinearAttentionState::new(dk, dv);
    let mut out = Vec::with_capacity(steps * dv);
    for i in 0..steps {
        state.push(&k[i * dk..(i + 1) * dk], &v[i * dv..(i + 1) * dv]);
        let y = state.read(&q[i * dk..(i + 1) * dk]).ok_or(Error::ZeroDenominator { step: i })?;
        out.extend(y);
    }
    Ok(out)
}

/// Quadratic form `y(i) = Σ_{j≤i} (q_i·k_j) v_j / Σ_{j≤i} q_i·k_j`.
pub fn linear_attention_direct(q: &[f64], k: &[f64], v: &[f64], steps: usize, dk: usize, dv: usize) -> Result<Vec<f64>> {
    check(q, k, v, steps, dk, dv)?;
    let mut out = vec![0.0; steps * dv];
    for i in 0..steps {
        let qi = &q[i * dk..(i + 1) * dk];
        let mut den = 0.0;
        for j in 0..=i {
            let w: f64 = qi.iter().zip(&k[j * dk..(j + 1) * dk]).map(|(a, b)| a * b).sum();
            den += w;
            for b in 0..dv {
                out[i * dv + b] += w * v[j * dv + b];
            }
        }
        if den == 0.0 || !den.is_finite() {
            return Err(Error::ZeroDenominator { step: i });
        }
        out[i * dv..(i + 1) * dv].iter_mut().for_each(|y| *y /= den);
    }
    Ok(out)
}

/// `elu(x) + 1`, strictly positive.
pub fn positive_features(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v + 1.0 } else { v.exp() }).collect()
}
