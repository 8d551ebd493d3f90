//! Acceptance suite. Each test implements one numbered criterion, pins its
//! tolerance in code, and prints a PASS line with the measured figure.
//! Run with `cargo test -p sigma-cli --test acceptance -- --nocapture`.

use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use sigma_core::analysis::{
    gradcheck, gradcheck_negative_control, scaling_curve, stage_flops_table, GradcheckOp,
};
use sigma_core::fusion::{
    concat_selective_scan, concat_sequences, cromb, cross_selective_scan, reverse_sequence,
    separate_sequence, CrombBranchWeights, CrombWeights, CrossExchangeMode, ModalityPair,
};
use sigma_core::model::{
    count_flops, count_params, decode, encode_siamese, forward_logits, fuse_levels, init_weights,
    logits_to_labels, DecoderKind, FusionMode, SigmaConfig,
};
use sigma_core::reference;
use sigma_core::rng::Rng;
use sigma_core::scan2d::ALL_DIRECTIONS;
use sigma_core::ssm::{
    delta_rank_for, discretize_taylor, discretize_zoh, selective_scan_chunked, ContinuousSsm,
    DiscreteScanInputs, SelectionProjections, SelectiveSsmParams,
};
use sigma_core::tensor::{DenseArray, FeatureMap};

fn rand_arr(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> DenseArray<f64> {
    DenseArray::from_fn(shape.to_vec(), |_| rng.uniform_in(lo, hi))
}

fn random_params(channels: usize, state: usize, rng: &mut Rng) -> SelectiveSsmParams<f64> {
    let rank = delta_rank_for(channels);
    SelectiveSsmParams::new(
        ContinuousSsm::new(
            rand_arr(&[channels, state], rng, -1.0, 1.0),
            rand_arr(&[channels], rng, -1.0, 1.0),
        )
        .unwrap(),
        SelectionProjections {
            w_b: rand_arr(&[channels, state], rng, -0.5, 0.5),
            w_c: rand_arr(&[channels, state], rng, -0.5, 0.5),
            w_delta_down: rand_arr(&[channels, rank], rng, -0.5, 0.5),
            w_delta_up: rand_arr(&[rank, channels], rng, -0.5, 0.5),
            delta_bias: rand_arr(&[channels], rng, -0.2, 0.2),
        },
    )
    .unwrap()
}

#[test]
fn criterion_1_scan_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = Rng::new(0xC1);
    let mut max_rel: f64 = 0.0;
    for _ in 0..200 {
        let len = 1 + rng.range(64);
        let channels = 1 + rng.range(8);
        let state = 1 + rng.range(8);
        let inputs = DiscreteScanInputs::new(
            rand_arr(&[len, channels, state], &mut rng, 0.0, 0.99),
            rand_arr(&[len, channels, state], &mut rng, -1.0, 1.0),
            rand_arr(&[len, state], &mut rng, -1.0, 1.0),
            rand_arr(&[channels], &mut rng, -1.0, 1.0),
            rand_arr(&[len, channels], &mut rng, -1.0, 1.0),
        )
        .unwrap();
        let chunk = 1 + rng.range(len);
        let got = selective_scan_chunked(&inputs, chunk).unwrap();
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
        for (a, b) in got.data().iter().zip(&want) {
            max_rel = max_rel.max((a - b).abs() / b.abs().max(1e-30));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(max_rel <= 1e-10, "max relative error {max_rel:.3e}");
    assert!(elapsed < 10.0, "took {elapsed:.1}s (limit 10s)");
    println!(
        "[PASS] criterion 1: scan oracle equivalence, 200 cases, max rel err {max_rel:.3e} ({elapsed:.2}s)"
    );
}

#[test]
fn criterion_2_gradient_correctness() {
    let start = Instant::now();
    let report = gradcheck(GradcheckOp::SelectiveScan, 0xC2, 50, 1e-5, 1e-4);
    assert!(
        report.pass,
        "gradcheck failed: max rel err {:.3e}",
        report.max_rel_err
    );
    let control = gradcheck_negative_control(0xC2, 1e-5);
    assert!(
        control >= 1e-1,
        "corrupted backward went undetected: {control:.3e}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed:.1}s (limit 30s)");
    println!(
        "[PASS] criterion 2: gradient correctness, 50 cases, max rel err {:.3e}, negative control err {control:.3e} ({elapsed:.2}s)",
        report.max_rel_err
    );
}

#[test]
fn criterion_3_discretization_consistency() {
    let start = Instant::now();
    let mut rng = Rng::new(0xC3);
    let (channels, state, len) = (3, 4, 6);
    let a_log = rand_arr(&[channels, state], &mut rng, -1.0, 1.0);
    let a = a_log.map(|v| -v.exp());
    let b = rand_arr(&[len, state], &mut rng, -1.0, 1.0);
    let b_norm = b
        .data()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));

    // sup-norm gap between the exact and first-order input factors,
    // measured against the step-independent |b|
    let gap = |dt: f64| -> f64 {
        let delta = DenseArray::full(vec![len, channels], dt);
        let (_, zoh) = discretize_zoh(&a, &b, &delta).unwrap();
        let taylor = discretize_taylor(&b, &delta).unwrap();
        zoh.data()
            .iter()
            .zip(taylor.data())
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
            / b_norm
    };

    let mut dt = 0.1;
    let mut errs = Vec::new();
    for _ in 0..5 {
        errs.push(gap(dt));
        dt /= 2.0;
    }
    let mut min_order = f64::INFINITY;
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        min_order = min_order.min(order);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        min_order >= 1.9,
        "empirical order {min_order:.3} < 1.9 (errors {errs:?})"
    );
    assert!(elapsed < 1.0, "took {elapsed:.2}s (limit 1s)");
    println!(
        "[PASS] criterion 3: discretization consistency, empirical order {min_order:.3} ({elapsed:.3}s)"
    );
}

#[test]
fn criterion_4_stage_flops_table() {
    let start = Instant::now();
    let table = stage_flops_table(4);
    let conm_expected = [1.82f64, 1.71, 1.65, 1.62];
    for (row, want) in table.iter().zip(conm_expected) {
        let dev = (row.conm_gflops - want).abs() / want;
        println!(
            "  stage {} conm {:.3} G vs {want} G ({:+.1}%)",
            row.stage,
            row.conm_gflops,
            (row.conm_gflops / want - 1.0) * 100.0
        );
        for (term, v) in &row.conm.terms {
            println!("    conm.{term}: {:.3} G", v / 1e9);
        }
        assert!(dev <= 0.20, "stage {} conm off by {:.1}%", row.stage, dev * 100.0);
    }
    for (stage, want) in [(2usize, 77.89f64), (3, 15.94), (4, 8.19)] {
        let row = &table[stage - 1];
        let dev = (row.consa_gflops - want).abs() / want;
        println!(
            "  stage {stage} consa {:.3} G vs {want} G ({:+.1}%)",
            row.consa_gflops,
            (row.consa_gflops / want - 1.0) * 100.0
        );
        for (term, v) in &row.consa.terms {
            println!("    consa.{term}: {:.3} G", v / 1e9);
        }
        assert!(dev <= 0.20, "stage {stage} consa off by {:.1}%", dev * 100.0);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "took {elapsed:.2}s (limit 1s)");
    println!("[PASS] criterion 4: four-stage complexity table reproduced within 20% ({elapsed:.3}s)");
}

#[test]
fn criterion_5_scaling_law() {
    let start = Instant::now();
    let lengths: Vec<usize> = (10..=16).map(|p| 1usize << p).collect();
    let curve = scaling_curve(&lengths, 192, 4);
    assert!(
        (0.95..=1.05).contains(&curve.conm_slope),
        "conm slope {:.4}",
        curve.conm_slope
    );
    assert!(
        (1.8..=2.05).contains(&curve.consa_slope),
        "consa slope {:.4}",
        curve.consa_slope
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "took {elapsed:.2}s (limit 1s)");
    println!(
        "[PASS] criterion 5: scaling slopes conm {:.4} (linear) / consa {:.4} (quadratic) ({elapsed:.3}s)",
        curve.conm_slope, curve.consa_slope
    );
}

#[test]
fn criterion_6_architecture_audit() {
    let start = Instant::now();
    let cfg = SigmaConfig::tiny(9);
    let shapes = cfg.pyramid_shapes(480, 640).unwrap();
    assert_eq!(
        shapes,
        vec![(120, 160, 96), (60, 80, 192), (30, 40, 384), (15, 20, 768)],
        "pyramid does not match the published stage geometry"
    );
    let params = count_params(&cfg).unwrap() as f64 / 1e6;
    let p_dev = (params / 48.3 - 1.0) * 100.0;
    println!("  params {params:.2} M vs 48.3 M ({p_dev:+.1}%)");
    assert!(p_dev.abs() <= 25.0, "params deviation {p_dev:.1}% exceeds 25%");
    let flops = count_flops(&cfg, 480, 640).unwrap();
    let g = flops.gflops();
    let f_dev = (g / 89.5 - 1.0) * 100.0;
    println!("  flops {g:.2} G vs 89.5 G ({f_dev:+.1}%)");
    for (term, v) in &flops.terms {
        println!("    {term}: {:.2} G", v / 1e9);
    }
    println!("  deviations itemized: decoder width/depth conventions are unspecified upstream;");
    println!("  this build runs decoder blocks at stage width with expansion 1 and a hidden-C1 classifier.");
    assert!(f_dev.abs() <= 25.0, "flops deviation {f_dev:.1}% exceeds 25%");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.2}s (limit 5s)");
    println!(
        "[PASS] criterion 6: architecture audit, params {params:.2} M ({p_dev:+.1}%), flops {g:.2} G ({f_dev:+.1}%) ({elapsed:.2}s)"
    );
}

fn random_cromb_branch(c: usize, e: usize, state: usize, rng: &mut Rng) -> CrombBranchWeights<f64> {
    CrombBranchWeights {
        ln_gamma: DenseArray::full(vec![c], 1.0),
        ln_beta: DenseArray::zeros(vec![c]),
        w_in: rand_arr(&[c, e], rng, -0.3, 0.3),
        b_in: DenseArray::zeros(vec![e]),
        dw_kernel: rand_arr(&[3, 3, e], rng, -0.3, 0.3),
        w_gate: rand_arr(&[c, e], rng, -0.3, 0.3),
        b_gate: DenseArray::zeros(vec![e]),
        w_out: rand_arr(&[e, c], rng, -0.3, 0.3),
        b_out: DenseArray::zeros(vec![c]),
        scans: [
            random_params(e, state, rng),
            random_params(e, state, rng),
            random_params(e, state, rng),
            random_params(e, state, rng),
        ],
    }
}

#[test]
fn criterion_7_fusion_identities() {
    let start = Instant::now();
    let mut rng = Rng::new(0xC7);

    // CroMB symmetry: identical inputs and weights -> bitwise equal outputs
    let (c, e) = (6, 12);
    let branch = random_cromb_branch(c, e, 3, &mut rng);
    let w = CrombWeights {
        rgb: branch.clone(),
        x_mod: branch,
        mode: CrossExchangeMode::C,
    };
    let f = FeatureMap::new(rand_arr(&[5, 4, c], &mut rng, -1.0, 1.0)).unwrap();
    let pair = ModalityPair::new(f.clone(), f).unwrap();
    let (out_rgb, out_x) = cromb(&pair, &w).unwrap();
    assert_eq!(out_rgb.data(), out_x.data(), "cromb symmetry broken");

    // mode-C reduction: equal c matrices -> two independent scans
    let mut p_rgb = random_params(3, 4, &mut rng);
    let p_x = {
        let mut p = random_params(3, 4, &mut rng);
        p.proj.w_c = p_rgb.proj.w_c.clone();
        p
    };
    p_rgb.proj.w_c = p_x.proj.w_c.clone();
    let seq = rand_arr(&[12, 3], &mut rng, -1.0, 1.0);
    let (y_rgb, y_x) = cross_selective_scan(&seq, &seq, &p_rgb, &p_x, CrossExchangeMode::C).unwrap();
    let solo_rgb = p_rgb.scan(&seq, Default::default()).unwrap();
    let solo_x = p_x.scan(&seq, Default::default()).unwrap();
    for (a, b) in y_rgb.data().iter().zip(solo_rgb.data()) {
        assert!((a - b).abs() <= 1e-12, "mode-C reduction rgb: {a} vs {b}");
    }
    for (a, b) in y_x.data().iter().zip(solo_x.data()) {
        assert!((a - b).abs() <= 1e-12, "mode-C reduction x: {a} vs {b}");
    }

    // concat reverse/separate roundtrips are exact
    let a = rand_arr(&[9, 4], &mut rng, -1.0, 1.0);
    let b = rand_arr(&[9, 4], &mut rng, -1.0, 1.0);
    let s = concat_sequences(&a, &b).unwrap();
    assert_eq!(reverse_sequence(&reverse_sequence(&s)).data(), s.data());
    let (a2, b2) = separate_sequence(&s).unwrap();
    assert_eq!(a2.data(), a.data());
    assert_eq!(b2.data(), b.data());

    // memoryless concat scan doubles the single branch exactly
    let mut params = random_params(4, 3, &mut rng);
    params.ssm.a_log = DenseArray::full(vec![4, 3], 25.0); // state factor underflows to zero
    let s_rgb = rand_arr(&[7, 4], &mut rng, -1.0, 1.0);
    let s_x = rand_arr(&[7, 4], &mut rng, -1.0, 1.0);
    let (y_rgb, y_x) = concat_selective_scan(&s_rgb, &s_x, &params).unwrap();
    let full = concat_sequences(&s_rgb, &s_x).unwrap();
    let single = params.scan(&full, Default::default()).unwrap();
    for l in 0..7 {
        for ch in 0..4 {
            assert_eq!(y_rgb.data()[l * 4 + ch], 2.0 * single.data()[l * 4 + ch]);
            assert_eq!(
                y_x.data()[l * 4 + ch],
                2.0 * single.data()[(7 + l) * 4 + ch]
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.2}s (limit 5s)");
    println!("[PASS] criterion 7: fusion identities (symmetry, mode-C reduction, roundtrips, memoryless doubling) ({elapsed:.2}s)");
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sigma")
}

fn write_ppm_bytes(path: &PathBuf, h: usize, w: usize, seed: Option<u64>) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    match seed {
        Some(s) => {
            let mut rng = Rng::new(s);
            bytes.extend((0..h * w * 3).map(|_| (rng.next_u64() & 0xff) as u8));
        }
        None => bytes.extend(std::iter::repeat_n(0u8, h * w * 3)),
    }
    fs::write(path, bytes).unwrap();
}

#[test]
fn criterion_8_end_to_end_determinism_and_shape() {
    let start = Instant::now();
    let dir = std::env::temp_dir().join(format!("sigma-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();

    let cfg = SigmaConfig {
        stage_depths: [1, 1, 2, 1],
        stage_dims: [8, 16, 32, 64],
        state_size: 4,
        decoder_depths: [1, 1, 1],
        num_classes: 9,
        fusion_mode: FusionMode::Full,
        decoder_kind: DecoderKind::Cavssb,
        cross_mode: CrossExchangeMode::C,
    };
    let cfg_path = dir.join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let weights_path = dir.join("w.sgw");
    let status = Command::new(bin())
        .args([
            "init-weights",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "11",
            "--out",
            weights_path.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success(), "init-weights failed");

    let rgb = dir.join("rgb.ppm");
    let x = dir.join("x.ppm");
    write_ppm_bytes(&rgb, 64, 64, Some(21));
    write_ppm_bytes(&x, 64, 64, Some(22));

    let mut outputs = Vec::new();
    for run in 0..3 {
        let out = dir.join(format!("pred{run}.ppm"));
        let status = Command::new(bin())
            .args([
                "forward",
                "--config",
                cfg_path.to_str().unwrap(),
                "--weights",
                weights_path.to_str().unwrap(),
                "--rgb",
                rgb.to_str().unwrap(),
                "--x",
                x.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success(), "forward run {run} failed");
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "run 0 and 1 differ");
    assert_eq!(outputs[1], outputs[2], "run 1 and 2 differ");

    // output extents equal input extents
    let header = String::from_utf8_lossy(&outputs[0][..20]).to_string();
    assert!(header.contains("64 64"), "unexpected label header {header}");

    // sum fusion with a zero X input equals the rgb-only path bitwise
    let (w, _) = init_weights::<f32>(
        &SigmaConfig {
            fusion_mode: FusionMode::Sum,
            ..cfg.clone()
        },
        11,
    )
    .unwrap();
    let sum_cfg = SigmaConfig {
        fusion_mode: FusionMode::Sum,
        ..cfg.clone()
    };
    let mut rng = Rng::new(31);
    let img = DenseArray::<f32>::from_fn(vec![64, 64, 3], |_| rng.uniform() as f32);
    let zeros = DenseArray::<f32>::zeros(vec![64, 64, 3]);
    let logits_sum = forward_logits(&img, &zeros, &w, &sum_cfg).unwrap();
    let (pyr_rgb, _) = encode_siamese(&img, &img, &w).unwrap();
    let logits_rgb_only = decode(&pyr_rgb, &w, &sum_cfg).unwrap();
    for (a, b) in logits_sum.data().iter().zip(logits_rgb_only.data()) {
        assert_eq!(a.to_bits(), b.to_bits(), "sum-with-zero-x differs from rgb-only");
    }
    let labels_sum = logits_to_labels(&logits_sum, &sum_cfg).unwrap();
    let labels_rgb = logits_to_labels(&logits_rgb_only, &sum_cfg).unwrap();
    assert_eq!(labels_sum.labels, labels_rgb.labels);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed:.2}s (limit 10s)");
    println!(
        "[PASS] criterion 8: forward determinism across 3 runs, 64x64 extents, zero-x sum == rgb-only ({elapsed:.2}s)"
    );
}

#[test]
fn criterion_9_ablation_surface_parity() {
    let start = Instant::now();
    let base = SigmaConfig::tiny(9);
    let mut variants: Vec<(String, SigmaConfig)> = Vec::new();
    for mode in [
        FusionMode::Full,
        FusionMode::CrombOnly,
        FusionMode::ConmbOnly,
        FusionMode::Sum,
    ] {
        variants.push((
            format!("fusion={mode:?}"),
            SigmaConfig {
                fusion_mode: mode,
                ..base.clone()
            },
        ));
    }
    for kind in [DecoderKind::Cavssb, DecoderKind::Mlp] {
        variants.push((
            format!("decoder={kind:?}"),
            SigmaConfig {
                decoder_kind: kind,
                ..base.clone()
            },
        ));
    }
    for mode in [
        CrossExchangeMode::C,
        CrossExchangeMode::B,
        CrossExchangeMode::D,
        CrossExchangeMode::BAndC,
        CrossExchangeMode::CAndD,
    ] {
        variants.push((
            format!("cross={}", mode.as_str()),
            SigmaConfig {
                cross_mode: mode,
                ..base.clone()
            },
        ));
    }
    for n in [4usize, 8, 16] {
        variants.push((
            format!("state={n}"),
            SigmaConfig {
                state_size: n,
                ..base.clone()
            },
        ));
    }
    for depths in [[2, 2, 2], [3, 3, 3], [4, 4, 4]] {
        variants.push((
            format!("decoder_depths={depths:?}"),
            SigmaConfig {
                decoder_depths: depths,
                ..base.clone()
            },
        ));
    }

    let (h, w) = (32usize, 32usize);
    let mut rng = Rng::new(0xC9);
    let rgb = DenseArray::<f32>::from_fn(vec![h, w, 3], |_| rng.uniform() as f32);
    let x = DenseArray::<f32>::from_fn(vec![h, w, 3], |_| rng.uniform() as f32);
    for (name, cfg) in &variants {
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        let params = count_params(cfg).unwrap();
        assert!(params > 0, "{name}: empty parameter set");
        let shapes = cfg.pyramid_shapes(h, w).unwrap();
        assert_eq!(shapes.len(), 4, "{name}");
        let (weights, _) = init_weights::<f32>(cfg, 5).unwrap();
        let (pyr_rgb, pyr_x) = encode_siamese(&rgb, &x, &weights).unwrap();
        for (f, (eh, ew, ec)) in pyr_rgb.levels.iter().zip(&shapes) {
            assert_eq!((f.h(), f.w(), f.c()), (*eh, *ew, *ec), "{name}: shape audit");
        }
        let fused = fuse_levels(&pyr_rgb, &pyr_x, &weights, cfg).unwrap();
        let logits = decode(&fused, &weights, cfg).unwrap();
        assert_eq!(
            logits.shape(),
            &[h / 4, w / 4, cfg.num_classes],
            "{name}: logit shape"
        );
        println!("  variant {name}: params {:.2} M, forward ok", params as f64 / 1e6);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s (limit 60s)");
    println!(
        "[PASS] criterion 9: {} ablation variants construct and run forward ({elapsed:.1}s)",
        variants.len()
    );
}

#[test]
fn cli_usage_error_exits_2() {
    let out = Command::new(bin()).args(["flops", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_numeric_failure_exits_1_with_json_diagnostic() {
    let dir = std::env::temp_dir().join(format!("sigma-acceptance-err-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("cfg.json");
    fs::write(
        &cfg_path,
        serde_json::to_string(&SigmaConfig::tiny(9)).unwrap(),
    )
    .unwrap();
    // weights file does not exist -> io error, exit 1, JSON on stderr
    let out = Command::new(bin())
        .args([
            "forward",
            "--config",
            cfg_path.to_str().unwrap(),
            "--weights",
            dir.join("missing.sgw").to_str().unwrap(),
            "--rgb",
            dir.join("missing.ppm").to_str().unwrap(),
            "--x",
            dir.join("missing.ppm").to_str().unwrap(),
            "--out",
            dir.join("out.ppm").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert!(parsed.get("kind").is_some());
}

#[test]
fn cli_scan_check_seeded_exit_zero() {
    let out = Command::new(bin())
        .args(["scan-check", "--seed", "7", "--cases", "200"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"));
}

#[test]
fn cli_flops_table_contains_stage2_row() {
    let dir = std::env::temp_dir().join(format!("sigma-acceptance-flops-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let out_path = dir.join("report.csv");
    let out = Command::new(bin())
        .args(["flops", "--table", "--out", out_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = fs::read_to_string(&out_path).unwrap();
    let row = csv
        .lines()
        .find(|l| l.starts_with("2,60,80,192,"))
        .expect("missing stage 2 row");
    let fields: Vec<f64> = row.split(',').skip(4).map(|v| v.parse().unwrap()).collect();
    assert!((fields[0] - 1.71).abs() / 1.71 <= 0.20, "conm {}", fields[0]);
    assert!((fields[1] - 77.89).abs() / 77.89 <= 0.20, "consa {}", fields[1]);

    // scanning directions of ALL_DIRECTIONS are the four fixed ones
    assert_eq!(ALL_DIRECTIONS.len(), 4);
}
