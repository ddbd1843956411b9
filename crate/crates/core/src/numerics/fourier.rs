//! Two-dimensional discrete Fourier transforms.
//!
//! Row-column decomposition of the naive O(N^2) 1-D transform. Twiddles are
//! indexed by `(k * t) mod N`, so every extent is supported exactly and the
//! phase argument never loses precision to large products.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Complex grid stored as separate real and imaginary planes (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != height * width || im.len() != height * width {
            return Err(Error::ShapeMismatch {
                op: "complex_grid",
                left: vec![re.len(), im.len()],
                right: vec![height, width],
            });
        }
        Ok(Self { height, width, re, im })
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        u * self.width + v
    }

    /// Squared magnitude of every bin.
    pub fn power(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).collect()
    }
}

/// Index of the Hermitian partner `(-u mod H, -v mod W)`.
#[inline]
pub fn hermitian_partner(u: usize, v: usize, height: usize, width: usize) -> (usize, usize) {
    ((height - u) % height, (width - v) % width)
}

struct Twiddles {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|t| {
                let ang = 2.0 * PI * t as f64 / n as f64;
                (ang.cos(), ang.sin())
            })
            .unzip();
        Self { cos, sin }
    }
}

/// In-place 1-D DFT over `n` strided complex values. `sign` is -1 for the
/// forward transform and +1 for the inverse (unnormalized).
fn dft1(re: &mut [f64], im: &mut [f64], start: usize, stride: usize, n: usize, tw: &Twiddles, sign: f64, scratch: &mut Vec<(f64, f64)>) {
    scratch.clear();
    for k in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        for t in 0..n {
            let idx = (k * t) % n;
            let (c, s) = (tw.cos[idx], sign * tw.sin[idx]);
            let (xr, xi) = (re[start + t * stride], im[start + t * stride]);
            sr += xr * c - xi * s;
            si += xr * s + xi * c;
        }
        scratch.push((sr, si));
    }
    for (k, &(r, i)) in scratch.iter().enumerate() {
        re[start + k * stride] = r;
        im[start + k * stride] = i;
    }
}

fn transform(grid: &mut ComplexGrid, sign: f64) {
    let (h, w) = (grid.height, grid.width);
    let (twh, tww) = (Twiddles::new(h), Twiddles::new(w));
    let mut scratch = Vec::with_capacity(h.max(w));
    for r in 0..h {
        dft1(&mut grid.re, &mut grid.im, r * w, 1, w, &tww, sign, &mut scratch);
    }
    for c in 0..w {
        dft1(&mut grid.re, &mut grid.im, c, w, h, &twh, sign, &mut scratch);
    }
}

fn grid_extents(image: &Tensor<f64>) -> Result<(usize, usize)> {
    match *image.shape() {
        [h, w] if h >= 1 && w >= 1 => Ok((h, w)),
        _ => Err(Error::invalid(format!(
            "dft2 expects a non-empty HxW grid, got shape {:?}",
            image.shape()
        ))),
    }
}

/// Unnormalized forward transform:
/// `X(u,v) = sum_{a,b} x(a,b) exp(-2 pi i (u a / H + v b / W))`.
pub fn dft2(image: &Tensor<f64>) -> Result<ComplexGrid> {
    let (h, w) = grid_extents(image)?;
    let mut grid = ComplexGrid::new(h, w, image.data().to_vec(), vec![0.0; h * w])?;
    transform(&mut grid, -1.0);
    Ok(grid)
}

/// Real part of an inverse transform and the largest imaginary magnitude
/// that was discarded.
#[derive(Debug, Clone)]
pub struct InverseDft {
    pub real: Tensor<f64>,
    pub imag_residue: f64,
}

/// Inverse transform with the `1 / (H W)` normalization.
pub fn idft2(spec: &ComplexGrid) -> Result<InverseDft> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::invalid("idft2 of an empty grid"));
    }
    if spec.re.iter().chain(&spec.im).any(|v| !v.is_finite()) {
        return Err(Error::invalid("idft2 spectrum contains non-finite values"));
    }
    let mut grid = spec.clone();
    transform(&mut grid, 1.0);
    let norm = 1.0 / (spec.height * spec.width) as f64;
    let real: Vec<f64> = grid.re.iter().map(|v| v * norm).collect();
    let imag_residue = grid.im.iter().fold(0.0f64, |m, v| m.max((v * norm).abs()));
    Ok(InverseDft {
        real: Tensor::new(vec![spec.height, spec.width], real)?,
        imag_residue,
    })
}
