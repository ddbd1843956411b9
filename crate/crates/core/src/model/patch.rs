//! Raster-order patch extraction. Images are `H x W x C` row-major; a patch
//! vector is its `P x P x C` block, also row-major.

use super::VimConfig;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

fn check(image_len: usize, cfg: &VimConfig) -> Result<()> {
    cfg.validate()?;
    if image_len != cfg.image_len() {
        return Err(Error::ShapeMismatch {
            op: "patchify",
            left: vec![image_len],
            right: vec![cfg.height, cfg.width, cfg.channels],
        });
    }
    Ok(())
}

/// Top-left pixel `(row, col)` of patch `index`.
pub fn patch_origin(index: usize, cfg: &VimConfig) -> (usize, usize) {
    let per_row = cfg.patches_per_row();
    ((index / per_row) * cfg.patch_size, (index % per_row) * cfg.patch_size)
}

/// Copies patch `index` of `image` into `out` (length P*P*C).
pub fn extract_patch<S: Copy, T>(image: &[S], index: usize, cfg: &VimConfig, out: &mut [T], conv: impl Fn(S) -> T) {
    let (p, c, w) = (cfg.patch_size, cfg.channels, cfg.width);
    let (r0, c0) = patch_origin(index, cfg);
    for py in 0..p {
        let src = ((r0 + py) * w + c0) * c;
        let dst = py * p * c;
        for k in 0..p * c {
            out[dst + k] = conv(image[src + k]);
        }
    }
}

/// Writes `patch` back into position `index` of `image`.
pub fn write_patch<S: Copy, T>(image: &mut [T], index: usize, cfg: &VimConfig, patch: &[S], conv: impl Fn(S) -> T) {
    let (p, c, w) = (cfg.patch_size, cfg.channels, cfg.width);
    let (r0, c0) = patch_origin(index, cfg);
    for py in 0..p {
        let dst = ((r0 + py) * w + c0) * c;
        let src = py * p * c;
        for k in 0..p * c {
            image[dst + k] = conv(patch[src + k]);
        }
    }
}

/// `H x W x C` image to `N x (P*P*C)` tokens.
pub fn patchify<T: Scalar>(image: &[T], cfg: &VimConfig) -> Result<Tensor<T>> {
    check(image.len(), cfg)?;
    let (n, pd) = (cfg.num_patches(), cfg.patch_dim());
    let mut out = vec![T::zero(); n * pd];
    for i in 0..n {
        extract_patch(image, i, cfg, &mut out[i * pd..(i + 1) * pd], |v| v);
    }
    Tensor::new(vec![n, pd], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(patches: &Tensor<T>, cfg: &VimConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    let (n, pd) = (cfg.num_patches(), cfg.patch_dim());
    if patches.shape() != [n, pd] {
        return Err(Error::ShapeMismatch {
            op: "unpatchify",
            left: patches.shape().to_vec(),
            right: vec![n, pd],
        });
    }
    let mut image = vec![T::zero(); cfg.image_len()];
    for i in 0..n {
        write_patch(&mut image, i, cfg, &patches.data()[i * pd..(i + 1) * pd], |v| v);
    }
    Ok(image)
}

/// Patchifies a batch of `f32` images stored back to back, converting to `T`.
pub fn patchify_batch<T: Scalar>(images: &[f32], count: usize, cfg: &VimConfig) -> Result<Tensor<T>> {
    let il = cfg.image_len();
    if images.len() != count * il {
        return Err(Error::ShapeMismatch {
            op: "patchify_batch",
            left: vec![images.len()],
            right: vec![count, cfg.height, cfg.width, cfg.channels],
        });
    }
    check(il, cfg)?;
    let (n, pd) = (cfg.num_patches(), cfg.patch_dim());
    let mut out = vec![T::zero(); count * n * pd];
    for b in 0..count {
        let img = &images[b * il..(b + 1) * il];
        for i in 0..n {
            let off = (b * n + i) * pd;
            extract_patch(img, i, cfg, &mut out[off..off + pd], T::of_f32);
        }
    }
    Tensor::new(vec![count * n, pd], out)
}
