use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ssm_scan, SsmBlock};
use crate::numerics::{SeededRng, Tensor};

/// Closed-form final state from per-step gates and injections (each
/// `[steps, dn]`): `h(N) = Σ_i (Π_{j>i} gate(j)) ⊙ inject(i)`.
///
/// Deliberately quadratic; it shares no code with the recurrence.
pub fn unrolled_state(gates: &[f64], injections: &[f64], steps: usize, dn: usize) -> Result<Vec<f64>> {
    if gates.len() != steps * dn || injections.len() != steps * dn {
        return Err(Error::ShapeMismatch {
            op: "unrolled_state",
            left: vec![gates.len(), injections.len()],
            right: vec![steps, dn],
        });
    }
    let mut h = vec![0.0; dn];
    for i in 0..steps {
        for (k, hk) in h.iter_mut().enumerate() {
            let mut decay = 1.0;
            for j in i + 1..steps {
                decay *= gates[j * dn + k];
            }
            *hk += decay * injections[i * dn + k];
        }
    }
    Ok(h)
}

/// [`unrolled_state`] for a block applied to a token sequence `[N, d]`.
pub fn unrolled_block_state(tokens: &Tensor<f64>, block: &SsmBlock<f64>, gate_override: Option<f64>) -> Result<Vec<f64>> {
    let (d, n) = block.dims();
    let (gates, inj) = block.gates_and_injections(tokens, gate_override)?;
    unrolled_state(&gates, &inj, tokens.len() / d, d * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub cases: usize,
    pub max_abs_error: f64,
}

fn random_block(d: usize, n: usize, rng: &mut SeededRng) -> Result<SsmBlock<f64>> {
    let mut g = |len: usize, scale: f64| -> Vec<f64> { (0..len).map(|_| rng.gaussian() * scale).collect() };
    Ok(SsmBlock {
        a_log: Tensor::new(vec![d, n], g(d * n, 0.5))?,
        w_delta: Tensor::new(vec![d, d], g(d * d, 0.3))?,
        b_delta: Tensor::new(vec![d], g(d, 0.5))?,
        w_b: Tensor::new(vec![d, n], g(d * n, 0.5))?,
        w_c: Tensor::new(vec![d, n], g(d * n, 0.5))?,
        d_skip: Tensor::new(vec![d], g(d, 1.0))?,
    })
}

/// Compares the recurrence with the unrolled sum on random blocks and
/// sequences of length `1..=max_len`, one case per seed.
pub fn scan_equivalence(seeds: std::ops::Range<u64>, max_len: usize, d: usize, n: usize) -> Result<EquivalenceReport> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in seeds {
        let mut rng = SeededRng::substream(seed, "scan-equivalence", 0);
        let block = random_block(d, n, &mut rng)?;
        let steps = 1 + rng.below(max_len);
        let tokens = Tensor::new(vec![steps, d], (0..steps * d).map(|_| rng.gaussian()).collect())?;
        let (_, trace) = ssm_scan(&tokens, &block, None)?;
        let unrolled = unrolled_block_state(&tokens, &block, None)?;
        for (a, b) in trace.final_state().iter().zip(&unrolled) {
            worst = worst.max((a - b).abs());
        }
        cases += 1;
    }
    Ok(EquivalenceReport {
        cases,
        max_abs_error: worst,
    })
}
