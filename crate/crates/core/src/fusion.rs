//! Multi-modal fusion kernels.
//!
//! Two mechanisms combine an RGB feature map with an X-modality map of the
//! same shape:
//!
//! * **CroMB** (cross selective scan): each modality runs its own selective
//!   scan recurrence, but a designated system matrix (by default the output
//!   decoder `c`) is taken from the *other* modality, so each stream is
//!   decoded through the other's selection.
//! * **ConMB** (concat selective scan): the two flattened sequences are
//!   concatenated along the length axis, scanned forward and in reverse,
//!   the reversed result is flipped back, summed, and split into the two
//!   halves again.
//!
//! `consa_baseline` swaps the concat scan for a standard transformer block
//! (single-head attention plus a width-2E feed-forward) and exists for
//! complexity comparison.

use crate::error::{Result, SigmaError};
use crate::scalar::Scalar;
use crate::scan2d::{flatten_direction, unflatten_direction, ScanDirection, ALL_DIRECTIONS};
use crate::ssm::{
    discretize_state_factor, discretize_taylor, derive_selection, selective_scan_chunked,
    DiscreteScanInputs, SelectiveSsmParams, DEFAULT_CHUNK,
};
use crate::tensor::{
    concat_last_axis, depthwise_conv2d, layer_norm, linear, silu, DenseArray, FeatureMap,
    LAYER_NORM_EPS,
};

/// Two same-shape feature maps, one per modality.
#[derive(Debug, Clone)]
pub struct ModalityPair<T> {
    pub rgb: FeatureMap<T>,
    pub x_mod: FeatureMap<T>,
}

impl<T: Scalar> ModalityPair<T> {
    pub fn new(rgb: FeatureMap<T>, x_mod: FeatureMap<T>) -> Result<Self> {
        if (rgb.h(), rgb.w(), rgb.c()) != (x_mod.h(), x_mod.w(), x_mod.c()) {
            return Err(SigmaError::dim(format!(
                "modality pair shapes differ: {}x{}x{} vs {}x{}x{}",
                rgb.h(),
                rgb.w(),
                rgb.c(),
                x_mod.h(),
                x_mod.w(),
                x_mod.c()
            )));
        }
        Ok(ModalityPair { rgb, x_mod })
    }
}

/// Which system matrices are exchanged between the two recurrences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossExchangeMode {
    #[default]
    C,
    B,
    D,
    BAndC,
    CAndD,
}

impl CrossExchangeMode {
    fn swaps_b(self) -> bool {
        matches!(self, CrossExchangeMode::B | CrossExchangeMode::BAndC)
    }
    fn swaps_c(self) -> bool {
        matches!(
            self,
            CrossExchangeMode::C | CrossExchangeMode::BAndC | CrossExchangeMode::CAndD
        )
    }
    fn swaps_d(self) -> bool {
        matches!(self, CrossExchangeMode::D | CrossExchangeMode::CAndD)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "c" | "C" => Ok(CrossExchangeMode::C),
            "b" | "B" => Ok(CrossExchangeMode::B),
            "d" | "D" => Ok(CrossExchangeMode::D),
            "b_and_c" | "B&C" | "bc" => Ok(CrossExchangeMode::BAndC),
            "c_and_d" | "C&D" | "cd" => Ok(CrossExchangeMode::CAndD),
            other => Err(SigmaError::config(format!(
                "unknown cross exchange mode '{other}' (expected c, b, d, b_and_c or c_and_d)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CrossExchangeMode::C => "c",
            CrossExchangeMode::B => "b",
            CrossExchangeMode::D => "d",
            CrossExchangeMode::BAndC => "b_and_c",
            CrossExchangeMode::CAndD => "c_and_d",
        }
    }
}

/// Run the two modality recurrences with the designated matrices exchanged.
///
/// Each modality derives its own selection from its own sequence and keeps
/// its own state transition; only the matrices named by `mode` cross over.
/// The default exchanges `c`, so each stream is decoded by the other
/// modality's output matrix.
pub fn cross_selective_scan<T: Scalar>(
    seq_rgb: &DenseArray<T>,
    seq_x: &DenseArray<T>,
    params_rgb: &SelectiveSsmParams<T>,
    params_x: &SelectiveSsmParams<T>,
    mode: CrossExchangeMode,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    if seq_rgb.shape() != seq_x.shape() {
        return Err(SigmaError::dim(format!(
            "cross scan sequences differ: {:?} vs {:?}",
            seq_rgb.shape(),
            seq_x.shape()
        )));
    }
    let (b_rgb, c_rgb, dt_rgb) = derive_selection(seq_rgb, &params_rgb.proj)?;
    let (b_x, c_x, dt_x) = derive_selection(seq_x, &params_x.proj)?;

    let a_bar_rgb = discretize_state_factor(&params_rgb.ssm.a(), &dt_rgb)?;
    let a_bar_x = discretize_state_factor(&params_x.ssm.a(), &dt_x)?;
    // the input factor is built from the (possibly exchanged) b with the
    // stream's own timestep
    let (b_for_rgb, b_for_x) = if mode.swaps_b() {
        (&b_x, &b_rgb)
    } else {
        (&b_rgb, &b_x)
    };
    let b_bar_rgb = discretize_taylor(b_for_rgb, &dt_rgb)?;
    let b_bar_x = discretize_taylor(b_for_x, &dt_x)?;

    let (c_for_rgb, c_for_x) = if mode.swaps_c() {
        (c_x, c_rgb)
    } else {
        (c_rgb, c_x)
    };
    let (d_for_rgb, d_for_x) = if mode.swaps_d() {
        (params_x.ssm.d_skip.clone(), params_rgb.ssm.d_skip.clone())
    } else {
        (params_rgb.ssm.d_skip.clone(), params_x.ssm.d_skip.clone())
    };

    let y_rgb = selective_scan_chunked(
        &DiscreteScanInputs::new(a_bar_rgb, b_bar_rgb, c_for_rgb, d_for_rgb, seq_rgb.clone())?,
        DEFAULT_CHUNK,
    )?;
    let y_x = selective_scan_chunked(
        &DiscreteScanInputs::new(a_bar_x, b_bar_x, c_for_x, d_for_x, seq_x.clone())?,
        DEFAULT_CHUNK,
    )?;
    Ok((y_rgb, y_x))
}

/// Weights for one CroMB modality branch.
#[derive(Debug, Clone)]
pub struct CrombBranchWeights<T> {
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
    /// one scan parameter set per direction, at width E
    pub scans: [SelectiveSsmParams<T>; 4],
}

/// Weights for a full CroMB (both modality branches).
#[derive(Debug, Clone)]
pub struct CrombWeights<T> {
    pub rgb: CrombBranchWeights<T>,
    pub x_mod: CrombBranchWeights<T>,
    pub mode: CrossExchangeMode,
}

/// Expansion ratio of the CroMB inner width over the block channel count.
pub const CROMB_EXPAND: usize = 2;

fn cromb_stem<T: Scalar>(
    f: &FeatureMap<T>,
    w: &CrombBranchWeights<T>,
) -> Result<(DenseArray<T>, FeatureMap<T>)> {
    let eps = T::from_f64(LAYER_NORM_EPS);
    let normed = layer_norm(f.array(), &w.ln_gamma, &w.ln_beta, eps)?;
    let expanded = linear(&normed, &w.w_in, Some(&w.b_in))?;
    let conv = depthwise_conv2d(&expanded, &w.dw_kernel)?;
    Ok((normed, FeatureMap::new(silu(&conv))?))
}

/// Cross Mamba Block: per-modality projection and depthwise convolution,
/// four-direction cross selective scans against the other modality's
/// same-direction sequence, gating, projection back and a residual.
pub fn cromb<T: Scalar>(
    pair: &ModalityPair<T>,
    w: &CrombWeights<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    let (h, wd) = (pair.rgb.h(), pair.rgb.w());
    let (normed_rgb, u_rgb) = cromb_stem(&pair.rgb, &w.rgb)?;
    let (normed_x, u_x) = cromb_stem(&pair.x_mod, &w.x_mod)?;

    // four directions, each pairing same-direction sequences across modalities
    let mut acc_rgb: Option<FeatureMap<T>> = None;
    let mut acc_x: Option<FeatureMap<T>> = None;
    for (dir, (p_rgb, p_x)) in ALL_DIRECTIONS
        .iter()
        .zip(w.rgb.scans.iter().zip(&w.x_mod.scans))
    {
        let s_rgb = flatten_direction(&u_rgb, *dir);
        let s_x = flatten_direction(&u_x, *dir);
        let (y_rgb, y_x) = cross_selective_scan(&s_rgb, &s_x, p_rgb, p_x, w.mode)?;
        let back_rgb = unflatten_direction(&y_rgb, *dir, h, wd)?;
        let back_x = unflatten_direction(&y_x, *dir, h, wd)?;
        acc_rgb = Some(match acc_rgb {
            None => back_rgb,
            Some(a) => a.add(&back_rgb)?,
        });
        acc_x = Some(match acc_x {
            None => back_x,
            Some(a) => a.add(&back_x)?,
        });
    }
    let scanned_rgb = acc_rgb.expect("four directions");
    let scanned_x = acc_x.expect("four directions");

    let finish = |f_in: &FeatureMap<T>,
                  normed: &DenseArray<T>,
                  scanned: &FeatureMap<T>,
                  bw: &CrombBranchWeights<T>|
     -> Result<FeatureMap<T>> {
        let gate = silu(&linear(normed, &bw.w_gate, Some(&bw.b_gate))?);
        let gated = scanned.array().hadamard(&gate)?;
        let projected = linear(&gated, &bw.w_out, Some(&bw.b_out))?;
        f_in.add(&FeatureMap::new(projected)?)
    };
    Ok((
        finish(&pair.rgb, &normed_rgb, &scanned_rgb, &w.rgb)?,
        finish(&pair.x_mod, &normed_x, &scanned_x, &w.x_mod)?,
    ))
}

/// Reverse a (L, C) sequence along its length axis.
pub fn reverse_sequence<T: Scalar>(s: &DenseArray<T>) -> DenseArray<T> {
    let (len, c) = (s.shape()[0], s.shape()[1]);
    let mut out = Vec::with_capacity(len * c);
    for l in (0..len).rev() {
        out.extend_from_slice(&s.data()[l * c..(l + 1) * c]);
    }
    DenseArray::new(vec![len, c], out).expect("reverse preserves element count")
}

/// Concatenate two (L, C) sequences along length into one (2L, C) sequence.
pub fn concat_sequences<T: Scalar>(a: &DenseArray<T>, b: &DenseArray<T>) -> Result<DenseArray<T>> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(SigmaError::dim(format!(
            "concat_sequences: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (len, c) = (a.shape()[0], a.shape()[1]);
    let mut data = Vec::with_capacity(2 * len * c);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    DenseArray::new(vec![2 * len, c], data)
}

/// Split a (2L, C) sequence back into its two length-L halves.
pub fn separate_sequence<T: Scalar>(
    s: &DenseArray<T>,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    if s.rank() != 2 || !s.shape()[0].is_multiple_of(2) {
        return Err(SigmaError::dim(format!(
            "separate: sequence {:?} is not an even-length (2L, C) array",
            s.shape()
        )));
    }
    let (len2, c) = (s.shape()[0], s.shape()[1]);
    let half = len2 / 2;
    let a = DenseArray::new(vec![half, c], s.data()[..half * c].to_vec())?;
    let b = DenseArray::new(vec![half, c], s.data()[half * c..].to_vec())?;
    Ok((a, b))
}

/// Concat selective scan: scan the concatenated sequence forward and
/// reversed with the same parameters, flip the reversed result back, sum,
/// and separate into the two modality halves.
pub fn concat_selective_scan<T: Scalar>(
    seq_rgb: &DenseArray<T>,
    seq_x: &DenseArray<T>,
    params: &SelectiveSsmParams<T>,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    let s = concat_sequences(seq_rgb, seq_x)?;
    let s_inv = reverse_sequence(&s);
    let y = params.scan(&s, Default::default())?;
    let y_inv = params.scan(&s_inv, Default::default())?;
    let summed = y.add(&reverse_sequence(&y_inv))?;
    separate_sequence(&summed)
}

/// Weights for a ConMB.
#[derive(Debug, Clone)]
pub struct ConmbWeights<T> {
    /// (C, C) per-modality input projections
    pub w_rgb: DenseArray<T>,
    pub b_rgb: DenseArray<T>,
    pub w_x: DenseArray<T>,
    pub b_x: DenseArray<T>,
    /// (3, 3, C) per-modality depthwise kernels
    pub dw_rgb: DenseArray<T>,
    pub dw_x: DenseArray<T>,
    /// shared scan parameters for the forward and inverse concat scans
    pub scan: SelectiveSsmParams<T>,
    /// learnable output scales
    pub s_rgb: T,
    pub s_x: T,
    /// (2C, C) channel-concat projection
    pub w_proj: DenseArray<T>,
    pub b_proj: DenseArray<T>,
}

/// Concat Mamba Block: per-modality projection and depthwise convolution,
/// one concat selective scan over the raster-flattened pair, learnable
/// scaling, channel concatenation and projection back to C.
pub fn conmb<T: Scalar>(pair: &ModalityPair<T>, w: &ConmbWeights<T>) -> Result<FeatureMap<T>> {
    let (h, wd) = (pair.rgb.h(), pair.rgb.w());
    let t_rgb = depthwise_conv2d(&linear(pair.rgb.array(), &w.w_rgb, Some(&w.b_rgb))?, &w.dw_rgb)?;
    let t_x = depthwise_conv2d(&linear(pair.x_mod.array(), &w.w_x, Some(&w.b_x))?, &w.dw_x)?;

    let s_rgb = flatten_direction(&FeatureMap::new(t_rgb)?, ScanDirection::RowMajor);
    let s_x = flatten_direction(&FeatureMap::new(t_x)?, ScanDirection::RowMajor);
    let (y_rgb, y_x) = concat_selective_scan(&s_rgb, &s_x, &w.scan)?;

    let scaled_rgb = y_rgb.scale(w.s_rgb);
    let scaled_x = y_x.scale(w.s_x);
    let stacked = concat_last_axis(&scaled_rgb, &scaled_x)?;
    let projected = linear(&stacked, &w.w_proj, Some(&w.b_proj))?;
    unflatten_direction(&projected, ScanDirection::RowMajor, h, wd)
}

/// Weights for the attention-based ConSA baseline.
#[derive(Debug, Clone)]
pub struct ConsaWeights<T> {
    pub w_rgb: DenseArray<T>,
    pub b_rgb: DenseArray<T>,
    pub w_x: DenseArray<T>,
    pub b_x: DenseArray<T>,
    pub dw_rgb: DenseArray<T>,
    pub dw_x: DenseArray<T>,
    /// (C, C) attention projections
    pub w_q: DenseArray<T>,
    pub w_k: DenseArray<T>,
    pub w_v: DenseArray<T>,
    pub w_o: DenseArray<T>,
    /// (C, 2C) and (2C, C) feed-forward
    pub w_ff1: DenseArray<T>,
    pub b_ff1: DenseArray<T>,
    pub w_ff2: DenseArray<T>,
    pub b_ff2: DenseArray<T>,
    pub s_rgb: T,
    pub s_x: T,
    pub w_proj: DenseArray<T>,
    pub b_proj: DenseArray<T>,
}

/// Single-head scaled-dot-product attention over a (L, C) sequence.
pub fn self_attention<T: Scalar>(
    seq: &DenseArray<T>,
    w_q: &DenseArray<T>,
    w_k: &DenseArray<T>,
    w_v: &DenseArray<T>,
) -> Result<DenseArray<T>> {
    let q = linear(seq, w_q, None)?;
    let k = linear(seq, w_k, None)?;
    let v = linear(seq, w_v, None)?;
    let (len, dim) = (q.shape()[0], q.shape()[1]);
    let scale = T::from_f64(1.0 / (dim as f64).sqrt());
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![T::ZERO; len * dim];
    for i in 0..len {
        let mut scores = vec![T::ZERO; len];
        let mut max_s = T::from_f64(f64::NEG_INFINITY);
        for j in 0..len {
            let mut dot = T::ZERO;
            for t in 0..dim {
                dot += qd[i * dim + t] * kd[j * dim + t];
            }
            let s = dot * scale;
            scores[j] = s;
            max_s = max_s.max(s);
        }
        let mut denom = T::ZERO;
        for s in &mut scores {
            *s = (*s - max_s).exp();
            denom += *s;
        }
        for j in 0..len {
            let wgt = scores[j] / denom;
            for t in 0..dim {
                out[i * dim + t] += wgt * vd[j * dim + t];
            }
        }
    }
    DenseArray::new(vec![len, dim], out)
}

/// Attention replacement for the concat scan: same pre/post processing as
/// [`conmb`], with a transformer block (attention + feed-forward) over the
/// concatenated sequence. Used for complexity comparison.
pub fn consa_baseline<T: Scalar>(
    pair: &ModalityPair<T>,
    w: &ConsaWeights<T>,
) -> Result<FeatureMap<T>> {
    let (h, wd) = (pair.rgb.h(), pair.rgb.w());
    let t_rgb = depthwise_conv2d(&linear(pair.rgb.array(), &w.w_rgb, Some(&w.b_rgb))?, &w.dw_rgb)?;
    let t_x = depthwise_conv2d(&linear(pair.x_mod.array(), &w.w_x, Some(&w.b_x))?, &w.dw_x)?;

    let s_rgb = flatten_direction(&FeatureMap::new(t_rgb)?, ScanDirection::RowMajor);
    let s_x = flatten_direction(&FeatureMap::new(t_x)?, ScanDirection::RowMajor);
    let s = concat_sequences(&s_rgb, &s_x)?;

    let attended = self_attention(&s, &w.w_q, &w.w_k, &w.w_v)?;
    let projected = linear(&attended, &w.w_o, None)?;
    let ff = linear(&silu(&linear(&projected, &w.w_ff1, Some(&w.b_ff1))?), &w.w_ff2, Some(&w.b_ff2))?;
    let (y_rgb, y_x) = separate_sequence(&ff)?;

    let stacked = concat_last_axis(&y_rgb.scale(w.s_rgb), &y_x.scale(w.s_x))?;
    let out = linear(&stacked, &w.w_proj, Some(&w.b_proj))?;
    unflatten_direction(&out, ScanDirection::RowMajor, h, wd)
}
