//! Dense rank-N arrays and the small set of neural primitives the rest of
//! the crate is built from: affine projections, depthwise convolution,
//! normalization, activations, pooling and bilinear resampling.
//!
//! Arithmetic never broadcasts silently. Shape mismatches are hard errors;
//! the only broadcast-like operation is the explicit [`scale_channels`].
//! Every operation is a pure function of its inputs, and internal
//! parallelism only ever writes disjoint output slices with a fixed
//! per-element reduction order, so repeated calls are bit-identical.

use rayon::prelude::*;

use crate::error::{Result, SigmaError};
use crate::scalar::{sigmoid_stable, softplus_stable, Scalar};

/// Row-major dense array. The universal value carrier for sequences,
/// feature maps and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseArray<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SigmaError::dim(format!(
                "shape {:?} holds {} elements but {} values were provided",
                shape,
                n,
                data.len()
            )));
        }
        Ok(DenseArray { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        DenseArray {
            shape,
            data: vec![T::ZERO; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        DenseArray {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        DenseArray {
            shape,
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(SigmaError::dim(format!(
                "cannot reshape {:?} ({} elems) to {:?} ({} elems)",
                self.shape,
                self.data.len(),
                shape,
                n
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Self {
        DenseArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Index of the first non-finite element, if any.
    pub fn first_nonfinite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.first_nonfinite() {
            Some(i) => Err(SigmaError::Numeric {
                index: i,
                detail: format!("non-finite value in {what}"),
            }),
            None => Ok(()),
        }
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(SigmaError::dim(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(DenseArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        Ok(DenseArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "hadamard")?;
        Ok(DenseArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a * b)
                .collect(),
        })
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    /// Convert element type, e.g. f64 verification copies of f32 weights.
    pub fn cast<U: Scalar>(&self) -> DenseArray<U> {
        DenseArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// H x W x C spatial feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    arr: DenseArray<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(arr: DenseArray<T>) -> Result<Self> {
        if arr.rank() != 3 {
            return Err(SigmaError::dim(format!(
                "feature map must be rank 3 (H, W, C), got {:?}",
                arr.shape()
            )));
        }
        Ok(FeatureMap { arr })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        FeatureMap {
            arr: DenseArray::zeros(vec![h, w, c]),
        }
    }

    pub fn h(&self) -> usize {
        self.arr.shape()[0]
    }

    pub fn w(&self) -> usize {
        self.arr.shape()[1]
    }

    pub fn c(&self) -> usize {
        self.arr.shape()[2]
    }

    pub fn array(&self) -> &DenseArray<T> {
        &self.arr
    }

    pub fn into_array(self) -> DenseArray<T> {
        self.arr
    }

    pub fn data(&self) -> &[T] {
        self.arr.data()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(FeatureMap {
            arr: self.arr.add(&other.arr)?,
        })
    }
}

/// Affine map over the last axis: `y[..., j] = sum_i x[..., i] w[i, j] + b[j]`.
/// All leading axes are preserved.
pub fn linear<T: Scalar>(
    x: &DenseArray<T>,
    w: &DenseArray<T>,
    b: Option<&DenseArray<T>>,
) -> Result<DenseArray<T>> {
    if w.rank() != 2 {
        return Err(SigmaError::dim(format!(
            "linear weight must be rank 2, got {:?}",
            w.shape()
        )));
    }
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    if x.rank() == 0 || *x.shape().last().unwrap() != d_in {
        return Err(SigmaError::dim(format!(
            "linear: input {:?} does not end in {}",
            x.shape(),
            d_in
        )));
    }
    if let Some(b) = b {
        if b.shape() != [d_out] {
            return Err(SigmaError::dim(format!(
                "linear: bias {:?} does not match output width {}",
                b.shape(),
                d_out
            )));
        }
    }
    let rows = x.len() / d_in;
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = d_out;
    let mut out = vec![T::ZERO; rows * d_out];

    let xd = x.data();
    let wd = w.data();
    out.par_chunks_mut(d_out).enumerate().for_each(|(r, row)| {
        let xr = &xd[r * d_in..(r + 1) * d_in];
        if let Some(b) = b {
            row.copy_from_slice(b.data());
        }
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &wd[i * d_out..(i + 1) * d_out];
            for (o, &wij) in row.iter_mut().zip(wr) {
                *o += xi * wij;
            }
        }
    });
    DenseArray::new(out_shape, out)
}

/// Per-channel k x k convolution with zero same-padding; spatial extents are
/// preserved and channels never mix.
pub fn depthwise_conv2d<T: Scalar>(
    x: &DenseArray<T>,
    kernel: &DenseArray<T>,
) -> Result<DenseArray<T>> {
    if x.rank() != 3 {
        return Err(SigmaError::dim(format!(
            "depthwise_conv2d input must be (H, W, C), got {:?}",
            x.shape()
        )));
    }
    if kernel.rank() != 3 || kernel.shape()[0] != kernel.shape()[1] {
        return Err(SigmaError::dim(format!(
            "depthwise kernel must be (k, k, C), got {:?}",
            kernel.shape()
        )));
    }
    let k = kernel.shape()[0];
    if k.is_multiple_of(2) {
        return Err(SigmaError::config(format!(
            "depthwise kernel size must be odd, got {k}"
        )));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if kernel.shape()[2] != c {
        return Err(SigmaError::dim(format!(
            "depthwise kernel has {} channels, input has {}",
            kernel.shape()[2],
            c
        )));
    }
    let half = (k / 2) as isize;
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![T::ZERO; h * w * c];
    out.par_chunks_mut(w * c).enumerate().for_each(|(i, row)| {
        for j in 0..w {
            for ch in 0..c {
                let mut acc = T::ZERO;
                for di in -half..=half {
                    let ii = i as isize + di;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in -half..=half {
                        let jj = j as isize + dj;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let kv = kd[(((di + half) as usize * k) + (dj + half) as usize) * c + ch];
                        acc += kv * xd[(ii as usize * w + jj as usize) * c + ch];
                    }
                }
                row[j * c + ch] = acc;
            }
        }
    });
    DenseArray::new(vec![h, w, c], out)
}

/// Normalize over the last axis to mean 0 / variance 1, then apply the
/// per-channel affine (gamma, beta).
pub fn layer_norm<T: Scalar>(
    x: &DenseArray<T>,
    gamma: &DenseArray<T>,
    beta: &DenseArray<T>,
    eps: T,
) -> Result<DenseArray<T>> {
    if !eps.is_finite() || eps <= T::ZERO {
        return Err(SigmaError::domain("layer_norm eps must be > 0"));
    }
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| SigmaError::dim("layer_norm on rank-0 array"))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(SigmaError::dim(format!(
            "layer_norm affine {:?}/{:?} does not match channel count {}",
            gamma.shape(),
            beta.shape(),
            c
        )));
    }
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let inv_c = T::ONE / T::from_f64(c as f64);
    let mut out = vec![T::ZERO; x.len()];
    out.par_chunks_mut(c).enumerate().for_each(|(r, row)| {
        let xr = &xd[r * c..(r + 1) * c];
        let mut mean = T::ZERO;
        for &v in xr {
            mean += v;
        }
        mean *= inv_c;
        let mut var = T::ZERO;
        for &v in xr {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_c;
        let inv_std = T::ONE / (var + eps).sqrt();
        for ch in 0..c {
            row[ch] = (xr[ch] - mean) * inv_std * gd[ch] + bd[ch];
        }
    });
    DenseArray::new(x.shape().to_vec(), out)
}

/// Default layer-norm epsilon used across the architecture.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn silu<T: Scalar>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(|v| v * sigmoid_stable(v))
}

pub fn softplus<T: Scalar>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(softplus_stable)
}

pub fn sigmoid<T: Scalar>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(sigmoid_stable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Reduce an (H, W, C) map over all spatial positions to a length-C vector.
pub fn global_pool<T: Scalar>(x: &DenseArray<T>, mode: PoolMode) -> Result<DenseArray<T>> {
    if x.rank() != 3 {
        return Err(SigmaError::dim(format!(
            "global_pool input must be (H, W, C), got {:?}",
            x.shape()
        )));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if h == 0 || w == 0 {
        return Err(SigmaError::dim("global_pool over empty spatial extent"));
    }
    let xd = x.data();
    let mut out = vec![T::ZERO; c];
    match mode {
        PoolMode::Avg => {
            for pos in 0..h * w {
                for ch in 0..c {
                    out[ch] += xd[pos * c + ch];
                }
            }
            let denom = T::from_f64((h * w) as f64);
            for v in &mut out {
                *v = *v / denom;
            }
        }
        PoolMode::Max => {
            out.copy_from_slice(&xd[..c]);
            for pos in 1..h * w {
                for ch in 0..c {
                    out[ch] = out[ch].max(xd[pos * c + ch]);
                }
            }
        }
    }
    DenseArray::new(vec![c], out)
}

/// Bilinear upsampling by an integer factor, align_corners = false.
/// Constant maps stay constant.
pub fn upsample_bilinear<T: Scalar>(x: &DenseArray<T>, factor: usize) -> Result<DenseArray<T>> {
    if factor < 2 {
        return Err(SigmaError::config(format!(
            "upsample factor must be >= 2, got {factor}"
        )));
    }
    if x.rank() != 3 {
        return Err(SigmaError::dim(format!(
            "upsample input must be (H, W, C), got {:?}",
            x.shape()
        )));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h * factor, w * factor);
    let xd = x.data();
    let f = factor as f64;
    let mut out = vec![T::ZERO; oh * ow * c];

    // Source coordinate of output pixel centre i: (i + 0.5) / f - 0.5,
    // clamped to the valid range.
    let src_axis = |n: usize, i: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) / f - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f64)
    };

    out.par_chunks_mut(ow * c).enumerate().for_each(|(i, row)| {
        let (i0, i1, ti) = src_axis(h, i);
        for j in 0..ow {
            let (j0, j1, tj) = src_axis(w, j);
            for ch in 0..c {
                let v00 = xd[(i0 * w + j0) * c + ch].to_f64();
                let v01 = xd[(i0 * w + j1) * c + ch].to_f64();
                let v10 = xd[(i1 * w + j0) * c + ch].to_f64();
                let v11 = xd[(i1 * w + j1) * c + ch].to_f64();
                let top = v00 + (v01 - v00) * tj;
                let bot = v10 + (v11 - v10) * tj;
                row[j * c + ch] = T::from_f64(top + (bot - top) * ti);
            }
        }
    });
    DenseArray::new(vec![oh, ow, c], out)
}

/// Explicit channel broadcast: multiply every spatial position of an
/// (H, W, C) map by a length-C vector.
pub fn scale_channels<T: Scalar>(x: &DenseArray<T>, s: &DenseArray<T>) -> Result<DenseArray<T>> {
    if x.rank() != 3 {
        return Err(SigmaError::dim(format!(
            "scale_channels input must be (H, W, C), got {:?}",
            x.shape()
        )));
    }
    let c = x.shape()[2];
    if s.shape() != [c] {
        return Err(SigmaError::dim(format!(
            "scale_channels vector {:?} does not match channel count {}",
            s.shape(),
            c
        )));
    }
    let sd = s.data();
    let data = x
        .data()
        .chunks(c)
        .flat_map(|px| px.iter().zip(sd).map(|(&v, &k)| v * k))
        .collect();
    DenseArray::new(x.shape().to_vec(), data)
}

/// Concatenate two arrays along the last axis; all leading extents must match.
pub fn concat_last_axis<T: Scalar>(a: &DenseArray<T>, b: &DenseArray<T>) -> Result<DenseArray<T>> {
    if a.rank() != b.rank() || a.rank() == 0 {
        return Err(SigmaError::dim(format!(
            "concat: rank mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let lead = a.rank() - 1;
    if a.shape()[..lead] != b.shape()[..lead] {
        return Err(SigmaError::dim(format!(
            "concat: leading extents differ {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ca, cb) = (a.shape()[lead], b.shape()[lead]);
    let rows: usize = a.shape()[..lead].iter().product();
    let mut data = Vec::with_capacity(rows * (ca + cb));
    for r in 0..rows {
        data.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
        data.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
    }
    let mut shape = a.shape().to_vec();
    shape[lead] = ca + cb;
    DenseArray::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn arr(shape: &[usize], data: &[f64]) -> DenseArray<f64> {
        DenseArray::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut Rng) -> DenseArray<f64> {
        DenseArray::from_fn(shape.to_vec(), |_| rng.uniform_in(-1.0, 1.0))
    }

    // Independent triple-loop matmul used as the oracle for `linear`.
    fn naive_linear(x: &[f64], w: &[f64], rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * d_out];
        for r in 0..rows {
            for j in 0..d_out {
                let mut acc = 0.0;
                for i in 0..d_in {
                    acc += x[r * d_in + i] * w[i * d_out + j];
                }
                out[r * d_out + j] = acc;
            }
        }
        out
    }

    #[test]
    fn linear_identity() {
        let x = arr(&[2], &[1.0, 2.0]);
        let w = arr(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = linear(&x, &w, None).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_zero_weight_bias_only() {
        let x = arr(&[2], &[1.0, 2.0]);
        let w = arr(&[2, 2], &[0.0; 4]);
        let b = arr(&[2], &[3.0, 4.0]);
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_matches_naive_matmul() {
        let mut rng = Rng::new(11);
        let x = random(&[3, 4], &mut rng);
        let w = random(&[4, 2], &mut rng);
        let y = linear(&x, &w, None).unwrap();
        let expect = naive_linear(x.data(), w.data(), 3, 4, 2);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_rejects_mismatch() {
        let x = arr(&[3], &[1.0, 2.0, 3.0]);
        let w = arr(&[2, 2], &[0.0; 4]);
        assert!(matches!(
            linear(&x, &w, None),
            Err(SigmaError::Dimension(_))
        ));
    }

    #[test]
    fn dwconv_delta_kernel_is_identity() {
        let mut rng = Rng::new(5);
        let x = random(&[4, 5, 2], &mut rng);
        let mut k = DenseArray::zeros(vec![3, 3, 2]);
        // centre tap = 1 for both channels
        k.data_mut()[(3 + 1) * 2] = 1.0;
        k.data_mut()[(3 + 1) * 2 + 1] = 1.0;
        let y = depthwise_conv2d(&x, &k).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dwconv_box_sum_interior() {
        let x = DenseArray::full(vec![5, 5, 1], 2.0);
        let k = DenseArray::full(vec![3, 3, 1], 1.0);
        let y = depthwise_conv2d(&x, &k).unwrap();
        // interior pixel sees the full 3x3 box
        assert!((y.data()[2 * 5 + 2] - 18.0).abs() < 1e-12);
        // corner only sees a 2x2 box
        assert!((y.data()[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn dwconv_matches_sliding_window_oracle() {
        let mut rng = Rng::new(9);
        let x = random(&[5, 5, 2], &mut rng);
        let k = random(&[3, 3, 2], &mut rng);
        let y = depthwise_conv2d(&x, &k).unwrap();
        // independent sliding-window loop
        for i in 0..5usize {
            for j in 0..5usize {
                for ch in 0..2usize {
                    let mut acc = 0.0;
                    for di in 0..3usize {
                        for dj in 0..3usize {
                            let ii = i as isize + di as isize - 1;
                            let jj = j as isize + dj as isize - 1;
                            if !(0..5).contains(&ii) || !(0..5).contains(&jj) {
                                continue;
                            }
                            acc += k.data()[(di * 3 + dj) * 2 + ch]
                                * x.data()[(ii as usize * 5 + jj as usize) * 2 + ch];
                        }
                    }
                    let got = y.data()[(i * 5 + j) * 2 + ch];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dwconv_rejects_even_kernel() {
        let x = DenseArray::<f64>::zeros(vec![4, 4, 1]);
        let k = DenseArray::<f64>::zeros(vec![2, 2, 1]);
        assert!(matches!(
            depthwise_conv2d(&x, &k),
            Err(SigmaError::Config(_))
        ));
    }

    #[test]
    fn layer_norm_constant_input_maps_to_beta() {
        let x = arr(&[3], &[1.0, 1.0, 1.0]);
        let g = arr(&[3], &[1.0, 1.0, 1.0]);
        let b = arr(&[3], &[0.0, 0.0, 0.0]);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_already_normalized() {
        let x = arr(&[2], &[1.0, -1.0]);
        let g = arr(&[2], &[1.0, 1.0]);
        let b = arr(&[2], &[0.0, 0.0]);
        let y = layer_norm(&x, &g, &b, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!((y.data()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = Rng::new(21);
        let x = random(&[16], &mut rng);
        let g = DenseArray::full(vec![16], 1.0);
        let b = DenseArray::zeros(vec![16]);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 16.0;
        let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-6);
        assert!((var - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn activations_closed_forms() {
        let x = arr(&[1], &[0.0]);
        assert_eq!(silu(&x).data()[0], 0.0);
        assert!((softplus(&x).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((sigmoid(&x).data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn global_pool_modes() {
        let x = arr(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_pool(&x, PoolMode::Avg).unwrap().data(), &[2.5]);
        assert_eq!(global_pool(&x, PoolMode::Max).unwrap().data(), &[4.0]);
        let c = DenseArray::full(vec![3, 3, 2], 7.0);
        assert_eq!(global_pool(&c, PoolMode::Avg).unwrap().data(), &[7.0, 7.0]);
        assert_eq!(global_pool(&c, PoolMode::Max).unwrap().data(), &[7.0, 7.0]);
    }

    #[test]
    fn global_pool_matches_loop_reduction() {
        let mut rng = Rng::new(2);
        let x = random(&[3, 4, 2], &mut rng);
        let avg = global_pool(&x, PoolMode::Avg).unwrap();
        let max = global_pool(&x, PoolMode::Max).unwrap();
        for ch in 0..2 {
            let mut s = 0.0;
            let mut m = f64::NEG_INFINITY;
            for pos in 0..12 {
                let v = x.data()[pos * 2 + ch];
                s += v;
                m = m.max(v);
            }
            assert!((avg.data()[ch] - s / 12.0).abs() < 1e-15);
            assert_eq!(max.data()[ch], m);
        }
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = DenseArray::full(vec![3, 2, 2], 5.0);
        let y = upsample_bilinear(&x, 2).unwrap();
        assert_eq!(y.shape(), &[6, 4, 2]);
        for v in y.data() {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_single_pixel_replicates() {
        let x = arr(&[1, 1, 1], &[3.5]);
        let y = upsample_bilinear(&x, 4).unwrap();
        assert_eq!(y.shape(), &[4, 4, 1]);
        for v in y.data() {
            assert_eq!(*v, 3.5);
        }
    }

    #[test]
    fn upsample_linear_ramp_closed_form() {
        // f(i, j) = j on a 1 x 4 row; interior output pixels must match the
        // closed-form source coordinate (j_out + 0.5) / 2 - 0.5.
        let x = arr(&[1, 4, 1], &[0.0, 1.0, 2.0, 3.0]);
        let y = upsample_bilinear(&x, 2).unwrap();
        for j in 1..7 {
            let s = ((j as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 3.0);
            assert!((y.data()[j] - s).abs() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn upsample_rejects_small_factor() {
        let x = DenseArray::<f64>::zeros(vec![2, 2, 1]);
        assert!(matches!(
            upsample_bilinear(&x, 1),
            Err(SigmaError::Config(_))
        ));
    }

    #[test]
    fn ops_are_pure() {
        let mut rng = Rng::new(77);
        let x = random(&[4, 4, 3], &mut rng);
        let k = random(&[3, 3, 3], &mut rng);
        let a = depthwise_conv2d(&x, &k).unwrap();
        let b = depthwise_conv2d(&x, &k).unwrap();
        assert_eq!(a.data(), b.data());
        let u = upsample_bilinear(&x, 2).unwrap();
        let v = upsample_bilinear(&x, 2).unwrap();
        assert_eq!(u.data(), v.data());
    }

    #[test]
    fn concat_and_scale_channels() {
        let a = arr(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = arr(&[2, 1, 1], &[9.0, 8.0]);
        let c = concat_last_axis(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);

        let s = arr(&[2], &[2.0, 0.5]);
        let scaled = scale_channels(&a, &s).unwrap();
        assert_eq!(scaled.data(), &[2.0, 1.0, 6.0, 2.0]);
    }
}
