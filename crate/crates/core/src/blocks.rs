//! Architectural blocks: the encoder VSSB, the channel-aware decoder block,
//! the patch-embedding stem and patch-merge downsampling.

use crate::error::{Result, SigmaError};
use crate::scalar::{sigmoid_stable, Scalar};
use crate::scan2d::{ss2d, DirectionalParams};
use crate::tensor::{
    depthwise_conv2d, global_pool, layer_norm, linear, scale_channels, silu, DenseArray,
    FeatureMap, PoolMode, LAYER_NORM_EPS,
};

/// Expansion ratio of the scan width over the block channel count in the
/// encoder and decoder blocks.
pub const BLOCK_EXPAND: usize = 1;

/// Reduction factor of the channel-attention bottleneck.
pub const CHANNEL_ATTN_REDUCTION: usize = 4;

/// Weights of one visual state space block.
#[derive(Debug, Clone)]
pub struct VssbWeights<T> {
    pub ln_gamma: DenseArray<T>,
    pub ln_beta: DenseArray<T>,
    /// (C, E)
    pub w_in: DenseArray<T>,
    pub b_in: DenseArray<T>,
    /// (3, 3, E)
    pub dw_kernel: DenseArray<T>,
    /// (C, E)
    pub w_gate: DenseArray<T>,
    pub b_gate: DenseArray<T>,
    /// (E, C)
    pub w_out: DenseArray<T>,
    pub b_out: DenseArray<T>,
    pub scans: DirectionalParams<T>,
}

/// VSSB weights plus the channel-attention bottleneck of the decoder block.
#[derive(Debug, Clone)]
pub struct CavssbWeights<T> {
    pub core: VssbWeights<T>,
    /// (C, C / reduction)
    pub mlp_w1: DenseArray<T>,
    pub mlp_b1: DenseArray<T>,
    /// (C / reduction, C)
    pub mlp_w2: DenseArray<T>,
    pub mlp_b2: DenseArray<T>,
}

/// Encoder block: pre-norm, expand, depthwise conv, silu, four-direction
/// scan, gate, project back, residual.
pub fn vssb<T: Scalar>(f: &FeatureMap<T>, w: &VssbWeights<T>) -> Result<FeatureMap<T>> {
    if w.w_in.shape()[0] != f.c() {
        return Err(SigmaError::dim(format!(
            "vssb weights expect {} channels, map has {}",
            w.w_in.shape()[0],
            f.c()
        )));
    }
    let eps = T::from_f64(LAYER_NORM_EPS);
    let normed = layer_norm(f.array(), &w.ln_gamma, &w.ln_beta, eps)?;
    let expanded = linear(&normed, &w.w_in, Some(&w.b_in))?;
    let conv = silu(&depthwise_conv2d(&expanded, &w.dw_kernel)?);
    let scanned = ss2d(&FeatureMap::new(conv)?, &w.scans)?;
    let gate = silu(&linear(&normed, &w.w_gate, Some(&w.b_gate))?);
    let gated = scanned.array().hadamard(&gate)?;
    let out = linear(&gated, &w.w_out, Some(&w.b_out))?;
    f.add(&FeatureMap::new(out)?)
}

/// Decoder block: a VSSB core followed by avg/max-pooled channel attention
/// and a second residual: `out = f1 + a * f1` with `f1 = vssb(f)`.
pub fn cavssb<T: Scalar>(f: &FeatureMap<T>, w: &CavssbWeights<T>) -> Result<FeatureMap<T>> {
    let f1 = vssb(f, &w.core)?;
    let attn = channel_attention(&f1, w)?;
    let modulated = scale_channels(f1.array(), &attn)?;
    f1.add(&FeatureMap::new(modulated)?)
}

/// Shared-MLP channel attention over pooled descriptors, in (0, 1)^C.
pub fn channel_attention<T: Scalar>(
    f1: &FeatureMap<T>,
    w: &CavssbWeights<T>,
) -> Result<DenseArray<T>> {
    let avg = global_pool(f1.array(), PoolMode::Avg)?;
    let max = global_pool(f1.array(), PoolMode::Max)?;
    let mlp = |v: &DenseArray<T>| -> Result<DenseArray<T>> {
        let hidden = silu(&linear(v, &w.mlp_w1, Some(&w.mlp_b1))?);
        linear(&hidden, &w.mlp_w2, Some(&w.mlp_b2))
    };
    let sum = mlp(&avg)?.add(&mlp(&max)?)?;
    Ok(sum.map(sigmoid_stable))
}

/// Stem weights: a linear embedding of each 4x4x3 patch.
#[derive(Debug, Clone)]
pub struct StemWeights<T> {
    /// (48, C1)
    pub w: DenseArray<T>,
    pub b: DenseArray<T>,
}

pub const PATCH: usize = 4;

/// Non-overlapping 4x4 patch embedding of an (H, W, 3) image.
pub fn patch_stem<T: Scalar>(image: &DenseArray<T>, w: &StemWeights<T>) -> Result<FeatureMap<T>> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(SigmaError::dim(format!(
            "stem input must be (H, W, 3), got {:?}",
            image.shape()
        )));
    }
    let (h, wd) = (image.shape()[0], image.shape()[1]);
    if !h.is_multiple_of(PATCH) || !wd.is_multiple_of(PATCH) {
        return Err(SigmaError::config(format!(
            "stem input {h}x{wd} is not divisible by the {PATCH}x{PATCH} patch size"
        )));
    }
    let (oh, ow) = (h / PATCH, wd / PATCH);
    let patch_len = PATCH * PATCH * 3;
    let mut gathered = Vec::with_capacity(oh * ow * patch_len);
    for pi in 0..oh {
        for pj in 0..ow {
            for di in 0..PATCH {
                for dj in 0..PATCH {
                    let (i, j) = (pi * PATCH + di, pj * PATCH + dj);
                    let base = (i * wd + j) * 3;
                    gathered.extend_from_slice(&image.data()[base..base + 3]);
                }
            }
        }
    }
    let patches = DenseArray::new(vec![oh * ow, patch_len], gathered)?;
    let embedded = linear(&patches, &w.w, Some(&w.b))?;
    let c1 = w.w.shape()[1];
    FeatureMap::new(embedded.reshape(vec![oh, ow, c1])?)
}

/// Downsample weights: patch-merge norm plus the (4C, 2C) reduction.
#[derive(Debug, Clone)]
pub struct DownsampleWeights<T> {
    pub ln_gamma: DenseArray<T>,
    pub ln_beta: DenseArray<T>,
    /// (4C, 2C)
    pub w: DenseArray<T>,
    pub b: DenseArray<T>,
}

/// 2x2 patch merging: gather each 2x2 neighbourhood into a 4C vector,
/// normalize, and project to 2C. Halves both spatial extents.
pub fn downsample<T: Scalar>(
    f: &FeatureMap<T>,
    w: &DownsampleWeights<T>,
) -> Result<FeatureMap<T>> {
    let (h, wd, c) = (f.h(), f.w(), f.c());
    if !h.is_multiple_of(2) || !wd.is_multiple_of(2) {
        return Err(SigmaError::config(format!(
            "downsample input {h}x{wd} must have even extents"
        )));
    }
    let (oh, ow) = (h / 2, wd / 2);
    let src = f.data();
    let mut gathered = Vec::with_capacity(oh * ow * 4 * c);
    for pi in 0..oh {
        for pj in 0..ow {
            for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let base = ((pi * 2 + di) * wd + (pj * 2 + dj)) * c;
                gathered.extend_from_slice(&src[base..base + c]);
            }
        }
    }
    let merged = DenseArray::new(vec![oh * ow, 4 * c], gathered)?;
    let eps = T::from_f64(LAYER_NORM_EPS);
    let normed = layer_norm(&merged, &w.ln_gamma, &w.ln_beta, eps)?;
    let reduced = linear(&normed, &w.w, Some(&w.b))?;
    let c2 = w.w.shape()[1];
    FeatureMap::new(reduced.reshape(vec![oh, ow, c2])?)
}
