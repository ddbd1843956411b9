use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::FrequencyHeatmap;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// CSV with header `u,v,score`, one row per bin.
pub fn write_heatmap_csv(heatmap: &FrequencyHeatmap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "u,v,score").map_err(io)?;
    for u in 0..heatmap.height {
        for v in 0..heatmap.width {
            writeln!(out, "{u},{v},{:e}", heatmap.get(u, v)).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Writes `δ` as a binary PPM (3 channels) or PGM (1 channel), stretched so
/// `-max|δ|` maps to 0 and `+max|δ|` to 255.
pub fn write_delta_image(delta: &Tensor<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let [h, w, c] = *delta.shape() else {
        return Err(Error::invalid("delta must be [H, W, C]"));
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::invalid(format!("cannot write {c}-channel image"))),
    };
    let peak = delta.max_abs();
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    bytes.extend(delta.data().iter().map(|&d| {
        let t = if peak > 0.0 { 0.5 + 0.5 * d / peak } else { 0.5 };
        (t * 255.0).round().clamp(0.0, 255.0) as u8
    }));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Raw little-endian `f64` dump of `δ`, no header.
pub fn write_raw_delta(delta: &Tensor<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = delta.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raw_delta(path: impl AsRef<Path>, shape: [usize; 3]) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = shape.iter().product::<usize>() * 8;
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Tensor::new(shape.to_vec(), data)
}
