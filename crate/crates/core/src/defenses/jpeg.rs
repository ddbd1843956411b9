//! Baseline-JPEG-style lossy round trip: 8x8 DCT, quantization and back.
//! Entropy coding is lossless and therefore omitted.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const LUMINANCE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard luminance table scaled the libjpeg way.
pub fn quantization_table(quality: u32) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("jpeg quality {quality} outside [1, 100]")));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut table = [0.0; 64];
    for (t, &base) in table.iter_mut().zip(&LUMINANCE) {
        *t = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(table)
}

/// `basis[k * 8 + x] = c(k) cos((2x + 1) k π / 16)`, orthonormal.
fn dct_basis() -> [f64; 64] {
    let mut b = [0.0; 64];
    for k in 0..8 {
        let c = if k == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for x in 0..8 {
            b[k * 8 + x] = c * ((2 * x + 1) as f64 * k as f64 * PI / 16.0).cos();
        }
    }
    b
}

fn transform(block: &[f64; 64], basis: &[f64; 64], inverse: bool) -> [f64; 64] {
    // separable: rows then columns
    let mut tmp = [0.0; 64];
    let mut out = [0.0; 64];
    let coef = |k: usize, x: usize| if inverse { basis[x * 8 + k] } else { basis[k * 8 + x] };
    for r in 0..8 {
        for k in 0..8 {
            tmp[r * 8 + k] = (0..8).map(|x| coef(k, x) * block[r * 8 + x]).sum();
        }
    }
    for c in 0..8 {
        for k in 0..8 {
            out[k * 8 + c] = (0..8).map(|y| coef(k, y) * tmp[y * 8 + c]).sum();
        }
    }
    out
}

/// Compresses and decompresses an `H x W x C` image in `[0, 1]`, channel by
/// channel, at the given quality.
pub fn jpeg_compress(image: &[f32], height: usize, width: usize, channels: usize, quality: u32) -> Result<Vec<f32>> {
    if image.len() != height * width * channels {
        return Err(Error::ShapeMismatch {
            op: "jpeg_compress",
            left: vec![image.len()],
            right: vec![height, width, channels],
        });
    }
    let table = quantization_table(quality)?;
    let basis = dct_basis();
    let mut out = vec![0.0f32; image.len()];
    let pixel = |r: usize, c: usize, ch: usize| {
        // edge replication into the padded border
        let (r, c) = (r.min(height - 1), c.min(width - 1));
        (image[(r * width + c) * channels + ch] as f64 * 255.0).round().clamp(0.0, 255.0)
    };
    for ch in 0..channels {
        for br in (0..height).step_by(8) {
            for bc in (0..width).step_by(8) {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = pixel(br + y, bc + x, ch) - 128.0;
                    }
                }
                let mut coeffs = transform(&block, &basis, false);
                for (f, q) in coeffs.iter_mut().zip(&table) {
                    *f = (*f / q).round() * q;
                }
                let rec = transform(&coeffs, &basis, true);
                for y in 0..8.min(height - br) {
                    for x in 0..8.min(width - bc) {
                        let v = (rec[y * 8 + x] + 128.0).round().clamp(0.0, 255.0);
                        out[((br + y) * width + bc + x) * channels + ch] = (v / 255.0) as f32;
                    }
                }
            }
        }
    }
    Ok(out)
}
