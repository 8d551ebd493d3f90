//! Naive reference implementations used as independent oracles.
//!
//! Everything here is written as plain, direct loops and never calls into
//! the production kernels, so it can serve as the comparison side of the
//! runtime `scan-check` / `gradcheck` verification suites and of the test
//! oracles. Clarity over speed throughout.

use crate::ssm::{selective_scan_backward, DiscreteScanInputs};
use crate::tensor::DenseArray;

/// Triple-loop matrix multiply: (rows, inner) x (inner, cols).
pub fn matmul(x: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for i in 0..inner {
                acc += x[r * inner + i] * w[i * cols + j];
            }
            out[r * cols + j] = acc;
        }
    }
    out
}

/// Direct evaluation of the scan recurrence, one step at a time.
#[allow(clippy::too_many_arguments)]
pub fn naive_scan(
    a_bar: &[f64],
    b_bar: &[f64],
    c: &[f64],
    d_skip: &[f64],
    x: &[f64],
    len: usize,
    channels: usize,
    state: usize,
) -> Vec<f64> {
    let mut h = vec![0.0; channels * state];
    let mut y = vec![0.0; len * channels];
    for l in 0..len {
        for d in 0..channels {
            for n in 0..state {
                let i = (l * channels + d) * state + n;
                h[d * state + n] = a_bar[i] * h[d * state + n] + b_bar[i] * x[l * channels + d];
            }
        }
        for d in 0..channels {
            let mut acc = 0.0;
            for n in 0..state {
                acc += c[l * state + n] * h[d * state + n];
            }
            y[l * channels + d] = acc + d_skip[d] * x[l * channels + d];
        }
    }
    y
}

/// Scalar loss for finite differencing: dot(grad_y, scan(inputs)).
fn scan_loss(inputs: &DiscreteScanInputs<f64>, grad_y: &[f64]) -> f64 {
    let y = naive_scan(
        inputs.a_bar.data(),
        inputs.b_bar.data(),
        inputs.c.data(),
        inputs.d_skip.data(),
        inputs.x.data(),
        inputs.len,
        inputs.channels,
        inputs.state,
    );
    y.iter().zip(grad_y).map(|(a, b)| a * b).sum()
}

/// Central-difference check of the analytic scan adjoint. Returns the
/// maximum relative error over every coordinate of every input array.
/// `chunk` is forwarded to the backward pass under test.
pub fn scan_gradcheck(
    inputs: &DiscreteScanInputs<f64>,
    grad_y: &DenseArray<f64>,
    step: f64,
    chunk: usize,
) -> f64 {
    let grads = selective_scan_backward(inputs, grad_y, chunk).expect("backward failed");
    let gy = grad_y.data();

    let mut max_rel: f64 = 0.0;
    let mut check = |analytic: &[f64], perturb: &mut dyn FnMut(usize, f64) -> DiscreteScanInputs<f64>| {
        for (i, &g) in analytic.iter().enumerate() {
            let plus = scan_loss(&perturb(i, step), gy);
            let minus = scan_loss(&perturb(i, -step), gy);
            let fd = (plus - minus) / (2.0 * step);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    };

    check(grads.x.data(), &mut |i, eps| {
        let mut m = inputs.clone();
        m.x.data_mut()[i] += eps;
        m
    });
    check(grads.a_bar.data(), &mut |i, eps| {
        let mut m = inputs.clone();
        m.a_bar.data_mut()[i] += eps;
        m
    });
    check(grads.b_bar.data(), &mut |i, eps| {
        let mut m = inputs.clone();
        m.b_bar.data_mut()[i] += eps;
        m
    });
    check(grads.c.data(), &mut |i, eps| {
        let mut m = inputs.clone();
        m.c.data_mut()[i] += eps;
        m
    });
    check(grads.d_skip.data(), &mut |i, eps| {
        let mut m = inputs.clone();
        m.d_skip.data_mut()[i] += eps;
        m
    });
    max_rel
}

/// As `scan_gradcheck` but with a sign flip injected into the x-gradient,
/// for negative-control runs that must fail.
pub fn scan_gradcheck_corrupted(
    inputs: &DiscreteScanInputs<f64>,
    grad_y: &DenseArray<f64>,
    step: f64,
) -> f64 {
    let grads = selective_scan_backward(inputs, grad_y, 4).expect("backward failed");
    let gy = grad_y.data();
    let mut max_rel: f64 = 0.0;
    for (i, &g) in grads.x.data().iter().enumerate() {
        let corrupted = -g; // deliberate fault
        let mut plus = inputs.clone();
        plus.x.data_mut()[i] += step;
        let mut minus = inputs.clone();
        minus.x.data_mut()[i] -= step;
        let fd = (scan_loss(&plus, gy) - scan_loss(&minus, gy)) / (2.0 * step);
        let rel = (corrupted - fd).abs() / corrupted.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

/// O(L^2) double-loop single-head attention over (len, dim) rows.
pub fn naive_attention(q: &[f64], k: &[f64], v: &[f64], len: usize, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    let mut out = vec![0.0; len * dim];
    for i in 0..len {
        let mut scores = vec![0.0; len];
        for j in 0..len {
            let mut dot = 0.0;
            for t in 0..dim {
                dot += q[i * dim + t] * k[j * dim + t];
            }
            scores[j] = dot * scale;
        }
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in &mut scores {
            *s = (*s - m).exp();
            denom += *s;
        }
        for j in 0..len {
            let w = scores[j] / denom;
            for t in 0..dim {
                out[i * dim + t] += w * v[j * dim + t];
            }
        }
    }
    out
}
