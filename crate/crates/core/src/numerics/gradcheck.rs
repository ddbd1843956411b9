//! Central finite differences for checking analytic gradients.

/// Relative error with a floor on the denominator so that pairs of
/// near-zero gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / scale
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_difference_at<F>(f: &mut F, x: &mut [f64], i: usize, step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[i];
    x[i] = orig + step;
    let hi = f(x);
    x[i] = orig - step;
    let lo = f(x);
    x[i] = orig;
    (hi - lo) / (2.0 * step)
}

/// Full numeric gradient of `f` at `x`.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| central_difference_at(&mut f, &mut work, i, step))
        .collect()
}

/// Outcome of comparing an analytic gradient against finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    let mut out = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: analytic.len(),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n);
        if e > out.max_relative_error || e.is_nan() {
            out.max_relative_error = e;
            out.worst_index = i;
        }
    }
    out
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)` over a whole
/// parameter tensor. Components that are orders of magnitude below the
/// tensor's scale do not dominate the comparison.
pub fn tensor_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
