//! Verification and complexity tooling: analytic FLOP models for the concat
//! fusion mechanism and its attention baseline, finite-difference gradient
//! checking, the runtime oracle-equivalence suite, and scan benchmarks.
//!
//! FLOP convention, used everywhere in the crate: one multiply-add counts as
//! 2 flops; exp, ln, division and comparison count as 1 flop per element;
//! silu costs 4 and softplus 3 flops per element. Totals are reported in
//! GFLOPs (1e9).

use std::time::Instant;

use crate::error::{Result, SigmaError};
use crate::fusion::{concat_selective_scan, cross_selective_scan, CrossExchangeMode};
use crate::reference;
use crate::rng::Rng;
use crate::scan2d::{flatten_direction, unflatten_direction, ALL_DIRECTIONS};
use crate::ssm::{
    delta_rank_for, derive_selection, discretize_state_factor, discretize_taylor,
    selective_scan_chunked, selective_scan_seq, ContinuousSsm, DiscreteScanInputs,
    SelectionProjections, SelectiveSsmParams,
};
use crate::tensor::{linear, DenseArray, FeatureMap};

/// Flops per multiply-add.
pub const MAC: f64 = 2.0;

/// Analytic cost of one selective scan over `tokens` steps at `width`
/// channels and `state` lanes, including selection and discretization.
pub fn scan_flops(tokens: usize, width: usize, state: usize) -> f64 {
    let rank = delta_rank_for(width);
    let (m, d, n, r) = (tokens as f64, width as f64, state as f64, rank as f64);
    let mut f = 0.0;
    f += MAC * m * d * n * 2.0; // b and c selection projections
    f += MAC * m * d * r * 2.0; // low-rank timestep projection
    f += 3.0 * m * d; // softplus
    f += 2.0 * m * d * n; // state factor: multiply + exp
    f += m * d * n; // input factor multiply
    f += MAC * 2.0 * m * d * n; // recurrence
    f += MAC * m * d * n; // output decode
    f += MAC * m * d; // skip path
    f
}

/// Cost of the transformer block used by the attention baseline: q/k/v and
/// output projections, scores, softmax, value mixing, and a width-2C
/// feed-forward.
pub fn attention_block_flops(tokens: usize, width: usize) -> f64 {
    let (m, d) = (tokens as f64, width as f64);
    let mut f = 0.0;
    f += MAC * 3.0 * m * d * d; // q, k, v projections
    f += MAC * m * m * d; // q k^T
    f += 3.0 * m * m; // softmax
    f += MAC * m * m * d; // attention-weighted values
    f += MAC * m * d * d; // output projection
    f += MAC * 4.0 * m * d * d + 4.0 * m * 2.0 * d; // feed-forward (hidden 2C) + silu
    f
}

/// One named-term FLOP breakdown.
#[derive(Debug, Clone)]
pub struct FlopsBreakdown {
    pub terms: Vec<(&'static str, f64)>,
}

impl FlopsBreakdown {
    pub fn total(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }

    pub fn gflops(&self) -> f64 {
        self.total() / 1e9
    }
}

/// Concat fusion mechanism cost for one level of the pyramid, per-modality
/// feature size (h, w, c). The scanned sequence is the two flattened
/// modalities concatenated, 2 h w tokens long, scanned forward and inverse.
pub fn flops_conm(h: usize, w: usize, c: usize, state: usize) -> FlopsBreakdown {
    let l = h * w;
    let m = 2 * l;
    let (lf, cf) = (l as f64, c as f64);
    FlopsBreakdown {
        terms: vec![
            ("pre_linear", MAC * 2.0 * lf * cf * cf),
            ("depthwise_conv", MAC * 2.0 * 9.0 * lf * cf),
            ("concat_scans", 2.0 * scan_flops(m, c, state)),
            ("output_scale", 2.0 * (m as f64) * cf),
            ("concat_projection", MAC * lf * 2.0 * cf * cf),
        ],
    }
}

/// Attention baseline cost for the same level geometry.
pub fn flops_consa(h: usize, w: usize, c: usize) -> FlopsBreakdown {
    let l = h * w;
    let m = 2 * l;
    let (lf, cf) = (l as f64, c as f64);
    FlopsBreakdown {
        terms: vec![
            ("pre_linear", MAC * 2.0 * lf * cf * cf),
            ("depthwise_conv", MAC * 2.0 * 9.0 * lf * cf),
            ("attention_block", attention_block_flops(m, c)),
            ("output_scale", 2.0 * (m as f64) * cf),
            ("concat_projection", MAC * lf * 2.0 * cf * cf),
        ],
    }
}

/// Per-modality sequence length variants of the two counters, for scaling
/// curves where the geometry is a free length rather than a feature map.
pub fn flops_conm_tokens(len: usize, c: usize, state: usize) -> f64 {
    let m = 2 * len;
    let (lf, cf) = (len as f64, c as f64);
    MAC * 2.0 * lf * cf * cf
        + MAC * 2.0 * 9.0 * lf * cf
        + 2.0 * scan_flops(m, c, state)
        + 2.0 * (m as f64) * cf
        + MAC * lf * 2.0 * cf * cf
}

pub fn flops_consa_tokens(len: usize, c: usize) -> f64 {
    let m = 2 * len;
    let (lf, cf) = (len as f64, c as f64);
    MAC * 2.0 * lf * cf * cf
        + MAC * 2.0 * 9.0 * lf * cf
        + attention_block_flops(m, c)
        + 2.0 * (m as f64) * cf
        + MAC * lf * 2.0 * cf * cf
}

/// Stage geometries of the tiny backbone at 480 x 640 input.
pub const STAGE_GEOMETRIES: [(usize, usize, usize); 4] =
    [(120, 160, 96), (60, 80, 192), (30, 40, 384), (15, 20, 768)];

/// One row of the per-stage complexity table.
#[derive(Debug, Clone)]
pub struct StageFlopsRow {
    pub stage: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub conm_gflops: f64,
    pub consa_gflops: f64,
    pub conm: FlopsBreakdown,
    pub consa: FlopsBreakdown,
}

/// The four-stage comparison table at the default state size.
pub fn stage_flops_table(state: usize) -> Vec<StageFlopsRow> {
    STAGE_GEOMETRIES
        .iter()
        .enumerate()
        .map(|(i, &(h, w, c))| {
            let conm = flops_conm(h, w, c, state);
            let consa = flops_consa(h, w, c);
            StageFlopsRow {
                stage: i + 1,
                h,
                w,
                c,
                conm_gflops: conm.gflops(),
                consa_gflops: consa.gflops(),
                conm,
                consa,
            }
        })
        .collect()
}

/// Least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Scaling curve over per-modality sequence lengths.
#[derive(Debug, Clone)]
pub struct ScalingCurve {
    pub rows: Vec<(usize, f64, f64)>,
    pub conm_slope: f64,
    pub consa_slope: f64,
}

pub fn scaling_curve(lengths: &[usize], c: usize, state: usize) -> ScalingCurve {
    let rows: Vec<(usize, f64, f64)> = lengths
        .iter()
        .map(|&l| {
            (
                l,
                flops_conm_tokens(l, c, state) / 1e9,
                flops_consa_tokens(l, c) / 1e9,
            )
        })
        .collect();
    let conm_pts: Vec<(f64, f64)> = rows.iter().map(|&(l, a, _)| (l as f64, a)).collect();
    let consa_pts: Vec<(f64, f64)> = rows.iter().map(|&(l, _, b)| (l as f64, b)).collect();
    ScalingCurve {
        conm_slope: log_log_slope(&conm_pts),
        consa_slope: log_log_slope(&consa_pts),
        rows,
    }
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradcheckOp {
    Linear,
    SelectiveScan,
}

impl GradcheckOp {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(GradcheckOp::Linear),
            "selective-scan" | "scan" => Ok(GradcheckOp::SelectiveScan),
            other => Err(SigmaError::config(format!(
                "unknown gradcheck op '{other}' (expected linear or selective-scan)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn random_scan_inputs(rng: &mut Rng, max_len: usize) -> DiscreteScanInputs<f64> {
    let len = 1 + rng.range(max_len);
    let channels = 1 + rng.range(3);
    let state = 1 + rng.range(3);
    let rand = |shape: &[usize], rng: &mut Rng, lo: f64, hi: f64| {
        DenseArray::from_fn(shape.to_vec(), |_| rng.uniform_in(lo, hi))
    };
    DiscreteScanInputs::new(
        rand(&[len, channels, state], rng, 0.0, 0.98),
        rand(&[len, channels, state], rng, -1.0, 1.0),
        rand(&[len, state], rng, -1.0, 1.0),
        rand(&[channels], rng, -1.0, 1.0),
        rand(&[len, channels], rng, -1.0, 1.0),
    )
    .expect("valid random scan inputs")
}

/// Central-difference verification of an operation's analytic gradient.
pub fn gradcheck(op: GradcheckOp, seed: u64, cases: usize, step: f64, tol: f64) -> GradcheckReport {
    let mut rng = Rng::new(seed);
    let mut max_rel: f64 = 0.0;
    match op {
        GradcheckOp::Linear => {
            for _ in 0..cases {
                let rows = 1 + rng.range(4);
                let d_in = 1 + rng.range(5);
                let d_out = 1 + rng.range(5);
                let x = DenseArray::from_fn(vec![rows, d_in], |_| rng.uniform_in(-1.0, 1.0));
                let w = DenseArray::from_fn(vec![d_in, d_out], |_| rng.uniform_in(-1.0, 1.0));
                let g = DenseArray::from_fn(vec![rows, d_out], |_| rng.uniform_in(-1.0, 1.0));
                // analytic: d(dot(g, xw))/dx = g w^T
                for r in 0..rows {
                    for i in 0..d_in {
                        let mut analytic = 0.0;
                        for o in 0..d_out {
                            analytic += g.data()[r * d_out + o] * w.data()[i * d_out + o];
                        }
                        let loss = |x: &DenseArray<f64>| -> f64 {
                            let y = linear(x, &w, None).unwrap();
                            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
                        };
                        let mut xp = x.clone();
                        xp.data_mut()[r * d_in + i] += step;
                        let mut xm = x.clone();
                        xm.data_mut()[r * d_in + i] -= step;
                        let fd = (loss(&xp) - loss(&xm)) / (2.0 * step);
                        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                        max_rel = max_rel.max(rel);
                    }
                }
            }
        }
        GradcheckOp::SelectiveScan => {
            for _ in 0..cases {
                let inputs = random_scan_inputs(&mut rng, 16);
                let gy = DenseArray::from_fn(vec![inputs.len, inputs.channels], |_| {
                    rng.uniform_in(-1.0, 1.0)
                });
                let chunk = 1 + rng.range(inputs.len);
                max_rel = max_rel.max(reference::scan_gradcheck(&inputs, &gy, step, chunk));
            }
        }
    }
    GradcheckReport {
        op: match op {
            GradcheckOp::Linear => "linear",
            GradcheckOp::SelectiveScan => "selective-scan",
        },
        cases,
        max_rel_err: max_rel,
        tolerance: tol,
        pass: max_rel <= tol && max_rel.is_finite(),
    }
}

/// Negative control: the same check with a sign fault injected into the
/// backward pass. Must report a large error.
pub fn gradcheck_negative_control(seed: u64, step: f64) -> f64 {
    let mut rng = Rng::new(seed);
    let inputs = random_scan_inputs(&mut rng, 8);
    let gy = DenseArray::from_fn(vec![inputs.len, inputs.channels], |_| {
        rng.uniform_in(0.5, 1.0)
    });
    reference::scan_gradcheck_corrupted(&inputs, &gy, step)
}

// ---------------------------------------------------------------------------
// oracle-equivalence suite (the `scan-check` command)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ScanCheckReport {
    pub cases: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl ScanCheckReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-30)
}

fn random_params(channels: usize, state: usize, rng: &mut Rng) -> SelectiveSsmParams<f64> {
    let rank = delta_rank_for(channels);
    let rand = |shape: &[usize], rng: &mut Rng, lo: f64, hi: f64| {
        DenseArray::from_fn(shape.to_vec(), |_| rng.uniform_in(lo, hi))
    };
    SelectiveSsmParams::new(
        ContinuousSsm::new(
            rand(&[channels, state], rng, -1.0, 1.0),
            rand(&[channels], rng, -1.0, 1.0),
        )
        .expect("valid ssm"),
        SelectionProjections {
            w_b: rand(&[channels, state], rng, -0.5, 0.5),
            w_c: rand(&[channels, state], rng, -0.5, 0.5),
            w_delta_down: rand(&[channels, rank], rng, -0.5, 0.5),
            w_delta_up: rand(&[rank, channels], rng, -0.5, 0.5),
            delta_bias: rand(&[channels], rng, -0.2, 0.2),
        },
    )
    .expect("valid params")
}

/// Randomized oracle equivalence over the scan kernels, the directional
/// flatten/unflatten pair, and the fusion scans. Returns per-family failure
/// notes and the worst relative error seen anywhere.
pub fn run_scan_check(seed: u64, cases: usize, max_len: usize) -> ScanCheckReport {
    let mut rng = Rng::new(seed);
    let mut failures = Vec::new();
    let mut max_rel: f64 = 0.0;
    let rand = |shape: &[usize], rng: &mut Rng, lo: f64, hi: f64| {
        DenseArray::from_fn(shape.to_vec(), |_| rng.uniform_in(lo, hi))
    };

    // chunked scan vs naive recurrence
    for case in 0..cases {
        let len = 1 + rng.range(max_len);
        let channels = 1 + rng.range(8);
        let state = 1 + rng.range(8);
        let inputs = DiscreteScanInputs::new(
            rand(&[len, channels, state], &mut rng, 0.0, 0.99),
            rand(&[len, channels, state], &mut rng, -1.0, 1.0),
            rand(&[len, state], &mut rng, -1.0, 1.0),
            rand(&[channels], &mut rng, -1.0, 1.0),
            rand(&[len, channels], &mut rng, -1.0, 1.0),
        )
        .expect("valid scan inputs");
        let want = reference::naive_scan(
            inputs.a_bar.data(),
            inputs.b_bar.data(),
            inputs.c.data(),
            inputs.d_skip.data(),
            inputs.x.data(),
            len,
            channels,
            state,
        );
        let chunk = 1 + rng.range(len);
        let got = match selective_scan_chunked(&inputs, chunk) {
            Ok(y) => y,
            Err(e) => {
                failures.push(format!("scan case {case}: {e}"));
                continue;
            }
        };
        for (a, b) in got.data().iter().zip(&want) {
            let r = rel_err(*a, *b);
            max_rel = max_rel.max(r);
            if r > 1e-10 {
                failures.push(format!("scan case {case}: rel err {r:.3e} (chunk {chunk})"));
                break;
            }
        }
    }

    // flatten/unflatten bijection and ss2d-style composition
    for case in 0..cases.min(50) {
        let h = 1 + rng.range(8);
        let w = 1 + rng.range(8);
        let c = 1 + rng.range(4);
        let f = FeatureMap::new(rand(&[h, w, c], &mut rng, -1.0, 1.0)).unwrap();
        for dir in ALL_DIRECTIONS {
            let s = flatten_direction(&f, dir);
            let back = unflatten_direction(&s, dir, h, w).unwrap();
            if back.data() != f.data() {
                failures.push(format!("flatten case {case}: roundtrip mismatch {dir:?}"));
            }
        }
    }

    // cross scan vs hand-swapped naive recurrence
    for case in 0..cases.min(50) {
        let len = 1 + rng.range(max_len.min(24));
        let channels = 1 + rng.range(4);
        let state = 1 + rng.range(4);
        let p_rgb = random_params(channels, state, &mut rng);
        let p_x = random_params(channels, state, &mut rng);
        let s_rgb = rand(&[len, channels], &mut rng, -1.0, 1.0);
        let s_x = rand(&[len, channels], &mut rng, -1.0, 1.0);
        let (y_rgb, _) =
            match cross_selective_scan(&s_rgb, &s_x, &p_rgb, &p_x, CrossExchangeMode::C) {
                Ok(pair) => pair,
                Err(e) => {
                    failures.push(format!("cross case {case}: {e}"));
                    continue;
                }
            };
        let (b, _, dt) = derive_selection(&s_rgb, &p_rgb.proj).unwrap();
        let (_, c_other, _) = derive_selection(&s_x, &p_x.proj).unwrap();
        let a_bar = discretize_state_factor(&p_rgb.ssm.a(), &dt).unwrap();
        let b_bar = discretize_taylor(&b, &dt).unwrap();
        let want = reference::naive_scan(
            a_bar.data(),
            b_bar.data(),
            c_other.data(),
            p_rgb.ssm.d_skip.data(),
            s_rgb.data(),
            len,
            channels,
            state,
        );
        for (a, bv) in y_rgb.data().iter().zip(&want) {
            let r = rel_err(*a, *bv);
            max_rel = max_rel.max(r);
            if r > 1e-10 {
                failures.push(format!("cross case {case}: rel err {r:.3e}"));
                break;
            }
        }
    }

    // concat scan vs naive double scan on the 2L sequence
    for case in 0..cases.min(50) {
        let len = 1 + rng.range(max_len.min(24));
        let channels = 1 + rng.range(4);
        let state = 1 + rng.range(4);
        let params = random_params(channels, state, &mut rng);
        let s_rgb = rand(&[len, channels], &mut rng, -1.0, 1.0);
        let s_x = rand(&[len, channels], &mut rng, -1.0, 1.0);
        let (y_rgb, y_x) = match concat_selective_scan(&s_rgb, &s_x, &params) {
            Ok(pair) => pair,
            Err(e) => {
                failures.push(format!("concat case {case}: {e}"));
                continue;
            }
        };
        let run_naive = |seq: &DenseArray<f64>| {
            let (b, cm, dt) = derive_selection(seq, &params.proj).unwrap();
            let a_bar = discretize_state_factor(&params.ssm.a(), &dt).unwrap();
            let b_bar = discretize_taylor(&b, &dt).unwrap();
            reference::naive_scan(
                a_bar.data(),
                b_bar.data(),
                cm.data(),
                params.ssm.d_skip.data(),
                seq.data(),
                2 * len,
                channels,
                state,
            )
        };
        // build the concatenated and reversed sequences by hand
        let mut s = Vec::new();
        s.extend_from_slice(s_rgb.data());
        s.extend_from_slice(s_x.data());
        let s = DenseArray::new(vec![2 * len, channels], s).unwrap();
        let mut rev = vec![0.0; 2 * len * channels];
        for l in 0..2 * len {
            rev[(2 * len - 1 - l) * channels..(2 * len - l) * channels]
                .copy_from_slice(&s.data()[l * channels..(l + 1) * channels]);
        }
        let s_inv = DenseArray::new(vec![2 * len, channels], rev).unwrap();
        let fwd = run_naive(&s);
        let inv = run_naive(&s_inv);
        let mut ok = true;
        for l in 0..len {
            for ch in 0..channels {
                let want_rgb = fwd[l * channels + ch] + inv[(2 * len - 1 - l) * channels + ch];
                let want_x = fwd[(len + l) * channels + ch] + inv[(len - 1 - l) * channels + ch];
                let r1 = rel_err(y_rgb.data()[l * channels + ch], want_rgb);
                let r2 = rel_err(y_x.data()[l * channels + ch], want_x);
                max_rel = max_rel.max(r1).max(r2);
                if r1 > 1e-10 || r2 > 1e-10 {
                    failures.push(format!("concat case {case}: rel err {:.3e}", r1.max(r2)));
                    ok = false;
                    break;
                }
            }
            if !ok {
                break;
            }
        }
    }

    ScanCheckReport {
        cases,
        max_rel_err: max_rel,
        failures,
    }
}

// ---------------------------------------------------------------------------
// benchmarks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub len: usize,
    pub seq_ms: f64,
    pub chunked_ms: f64,
    pub attention_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub repeats: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

/// Median wall time of the sequential scan, the chunked scan, and naive
/// attention over growing sequence lengths. Attention is skipped (reported
/// as 0) above `attention_cutoff` to keep runs bounded.
pub fn bench_scan(
    lengths: &[usize],
    channels: usize,
    state: usize,
    repeats: usize,
    attention_cutoff: usize,
) -> BenchReport {
    let mut rng = Rng::new(0x5ca1ab1e);
    let rand = |shape: &[usize], rng: &mut Rng| {
        DenseArray::from_fn(shape.to_vec(), |_| rng.uniform_in(-1.0, 1.0))
    };
    let mut rows = Vec::new();
    for &len in lengths {
        let inputs = DiscreteScanInputs::new(
            DenseArray::from_fn(vec![len, channels, state], |_| rng.uniform_in(0.0, 0.99)),
            rand(&[len, channels, state], &mut rng),
            rand(&[len, state], &mut rng),
            rand(&[channels], &mut rng),
            rand(&[len, channels], &mut rng),
        )
        .expect("bench inputs");
        // warm-up
        let _ = selective_scan_seq(&inputs).unwrap();

        let mut seq_times = Vec::new();
        let mut chunk_times = Vec::new();
        let mut attn_times = Vec::new();
        for _ in 0..repeats {
            let t = Instant::now();
            let _ = selective_scan_seq(&inputs).unwrap();
            seq_times.push(t.elapsed().as_secs_f64() * 1e3);

            let t = Instant::now();
            let _ = selective_scan_chunked(&inputs, 256).unwrap();
            chunk_times.push(t.elapsed().as_secs_f64() * 1e3);

            if len <= attention_cutoff {
                let q = rand(&[len, channels], &mut rng);
                let k = rand(&[len, channels], &mut rng);
                let v = rand(&[len, channels], &mut rng);
                let t = Instant::now();
                let _ = reference::naive_attention(q.data(), k.data(), v.data(), len, channels);
                attn_times.push(t.elapsed().as_secs_f64() * 1e3);
            }
        }
        rows.push(BenchRow {
            len,
            seq_ms: median(seq_times),
            chunked_ms: median(chunk_times),
            attention_ms: if attn_times.is_empty() {
                0.0
            } else {
                median(attn_times)
            },
        });
    }
    BenchReport { rows, repeats }
}
