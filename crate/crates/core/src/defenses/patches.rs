use crate::error::{Error, Result};
use crate::model::{extract_patch, write_patch, VimConfig};
use crate::numerics::SeededRng;

fn check(image: &[f32], cfg: &VimConfig) -> Result<()> {
    cfg.validate()?;
    if image.len() != cfg.image_len() {
        return Err(Error::ShapeMismatch {
            op: "patch_defense",
            left: vec![image.len()],
            right: vec![cfg.height, cfg.width, cfg.channels],
        });
    }
    Ok(())
}

/// Replaces `floor(fraction * N)` distinct random patches with `fill`.
pub fn patch_drop(image: &[f32], fraction: f64, rng: &mut SeededRng, cfg: &VimConfig, fill: &[f32]) -> Result<Vec<f32>> {
    check(image, cfg)?;
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("drop fraction {fraction} outside [0, 1)")));
    }
    if fill.len() != cfg.channels {
        return Err(Error::invalid("fill color must have one value per channel"));
    }
    let n = cfg.num_patches();
    let k = (fraction * n as f64).floor() as usize;
    let block: Vec<f32> = fill.iter().copied().cycle().take(cfg.patch_dim()).collect();
    let mut out = image.to_vec();
    for i in rng.sample_indices(n, k) {
        write_patch(&mut out, i, cfg, &block, |v| v);
    }
    Ok(out)
}

/// Rearranges the patches by a uniformly random permutation.
pub fn patch_shuffle(image: &[f32], rng: &mut SeededRng, cfg: &VimConfig) -> Result<Vec<f32>> {
    let mut perm: Vec<usize> = (0..cfg.num_patches()).collect();
    rng.shuffle(&mut perm);
    patch_shuffle_with(image, &perm, cfg)
}

/// Output patch `i` is input patch `perm[i]`.
pub fn patch_shuffle_with(image: &[f32], perm: &[usize], cfg: &VimConfig) -> Result<Vec<f32>> {
    check(image, cfg)?;
    let n = cfg.num_patches();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid("patch order is not a permutation"));
    }
    let pd = cfg.patch_dim();
    let mut buf = vec![0.0f32; pd];
    let mut out = vec![0.0f32; image.len()];
    for (dst, &src) in perm.iter().enumerate() {
        extract_patch(image, src, cfg, &mut buf, |v| v);
        write_patch(&mut out, dst, cfg, &buf, |v| v);
    }
    Ok(out)
}
