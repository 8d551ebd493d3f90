//! `sigma` command-line tool.
//!
//! Subcommands cover the verification surface (scan-check, gradcheck), the
//! complexity tables (flops, bench), and the segmentation forward pass
//! (init-weights, forward, shapes). Numeric failures exit 1 with a JSON
//! diagnostic on stderr; flag errors exit 2.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sigma_core::analysis::{
    bench_scan, gradcheck, gradcheck_negative_control, run_scan_check, scaling_curve,
    stage_flops_table, GradcheckOp,
};
use sigma_core::error::{Result, SigmaError};
use sigma_core::io::{
    load_bundle, read_ppm, save_bundle, write_label_ppm, write_tensor, AnyTensor, Dtype, Palette,
};
use sigma_core::model::{
    build_weights, count_flops, count_params, forward_logits, init_weights, logits_to_labels,
    MapSource, SigmaConfig,
};

#[derive(Parser)]
#[command(name = "sigma", version, about = "Selective-scan segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomized oracle-equivalence suite over the scan kernels.
    ScanCheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long = "max-len", default_value_t = 64)]
        max_len: usize,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        /// Operation to check: linear or selective-scan.
        #[arg(long, default_value = "selective-scan")]
        op: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Also run the corrupted-backward negative control.
        #[arg(long, default_value_t = false)]
        negative_control: bool,
    },
    /// Emit the fusion complexity table or a scaling curve.
    Flops(FlopsArgs),
    /// Run the forward pass on a modality pair and write the label image.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long = "x")]
        x_mod: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "save-logits")]
        save_logits: Option<PathBuf>,
    },
    /// Print the pyramid, parameter and FLOP audit for a config.
    Shapes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        hw: Vec<usize>,
    },
    /// Time the scan kernels against naive attention.
    Bench {
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Write a deterministic random weight bundle for a config.
    InitWeights {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FlopsArgs {
    /// Emit the per-stage table (default).
    #[arg(long, conflicts_with = "curve")]
    table: bool,
    /// Emit a scaling curve over per-modality lengths [LMIN, LMAX].
    #[arg(long, num_args = 2, value_names = ["LMIN", "LMAX"])]
    curve: Option<Vec<usize>>,
    /// Output file; .csv or .json by extension.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    state_size: usize,
    #[arg(long, default_value_t = 192)]
    channels: usize,
}

fn load_config(path: &Path) -> Result<SigmaConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: SigmaConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(path: &Path, csv: String, json: serde_json::Value) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => fs::write(path, serde_json::to_string_pretty(&json)?)?,
        _ => fs::write(path, csv)?,
    }
    Ok(())
}

fn cmd_scan_check(seed: u64, cases: usize, max_len: usize) -> Result<bool> {
    let report = run_scan_check(seed, cases, max_len);
    println!(
        "scan-check: {} cases, max relative error {:.3e}",
        report.cases, report.max_rel_err
    );
    for f in &report.failures {
        println!("  FAIL {f}");
    }
    println!("scan-check: {}", if report.pass() { "PASS" } else { "FAIL" });
    Ok(report.pass())
}

fn cmd_gradcheck(
    op: &str,
    seed: u64,
    cases: usize,
    step: f64,
    tol: f64,
    negative_control: bool,
) -> Result<bool> {
    let op = GradcheckOp::parse(op)?;
    let report = gradcheck(op, seed, cases, step, tol);
    println!(
        "gradcheck {}: {} cases, max relative error {:.3e} (tolerance {:.1e})",
        report.op, report.cases, report.max_rel_err, report.tolerance
    );
    let mut ok = report.pass;
    if negative_control {
        let err = gradcheck_negative_control(seed, step);
        let control_ok = err >= 1e-1;
        println!(
            "negative control (sign-flipped backward): error {:.3e} -> {}",
            err,
            if control_ok { "detected" } else { "NOT DETECTED" }
        );
        ok = ok && control_ok;
    }
    println!("gradcheck: {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn cmd_flops(args: &FlopsArgs) -> Result<bool> {
    if let Some(range) = &args.curve {
        let (lmin, lmax) = (range[0], range[1]);
        if lmin == 0 || lmax < lmin {
            return Err(SigmaError::config(format!(
                "invalid curve range {lmin}..{lmax}"
            )));
        }
        let mut lengths = Vec::new();
        let mut l = lmin;
        while l <= lmax {
            lengths.push(l);
            l *= 2;
        }
        let curve = scaling_curve(&lengths, args.channels, args.state_size);
        let mut csv = String::from("length,conm_gflops,consa_gflops\n");
        for (l, a, b) in &curve.rows {
            csv.push_str(&format!("{l},{a:.6},{b:.6}\n"));
        }
        println!("scaling over L = {lmin}..{lmax} at {} channels:", args.channels);
        println!("  conm  log-log slope {:.4}", curve.conm_slope);
        println!("  consa log-log slope {:.4}", curve.consa_slope);
        let json = serde_json::json!({
            "channels": args.channels,
            "state_size": args.state_size,
            "conm_slope": curve.conm_slope,
            "consa_slope": curve.consa_slope,
            "rows": curve.rows.iter().map(|(l, a, b)| serde_json::json!({
                "length": l, "conm_gflops": a, "consa_gflops": b
            })).collect::<Vec<_>>(),
        });
        if let Some(out) = &args.out {
            write_report(out, csv, json)?;
            println!("wrote {}", out.display());
        } else {
            print!("{csv}");
        }
        return Ok(true);
    }

    let table = stage_flops_table(args.state_size);
    let mut csv = String::from("stage,height,width,channels,conm_gflops,consa_gflops\n");
    for row in &table {
        csv.push_str(&format!(
            "{},{},{},{},{:.2},{:.2}\n",
            row.stage, row.h, row.w, row.c, row.conm_gflops, row.consa_gflops
        ));
    }
    println!("per-stage fusion complexity (GFLOPs):");
    for row in &table {
        println!(
            "stage {} ({}x{}x{}): conm {:.2}, consa {:.2}",
            row.stage, row.h, row.w, row.c, row.conm_gflops, row.consa_gflops
        );
        for (term, v) in &row.conm.terms {
            println!("    conm.{term:18} {:10.3} G", v / 1e9);
        }
        for (term, v) in &row.consa.terms {
            println!("    consa.{term:17} {:10.3} G", v / 1e9);
        }
    }
    let json = serde_json::json!({
        "state_size": args.state_size,
        "rows": table.iter().map(|r| serde_json::json!({
            "stage": r.stage, "height": r.h, "width": r.w, "channels": r.c,
            "conm_gflops": r.conm_gflops, "consa_gflops": r.consa_gflops,
            "conm_terms": r.conm.terms.iter().map(|(t, v)| serde_json::json!({"term": t, "gflops": v / 1e9})).collect::<Vec<_>>(),
            "consa_terms": r.consa.terms.iter().map(|(t, v)| serde_json::json!({"term": t, "gflops": v / 1e9})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    if let Some(out) = &args.out {
        write_report(out, csv, json)?;
        println!("wrote {}", out.display());
    } else {
        print!("{csv}");
    }
    Ok(true)
}

fn cmd_forward(
    config: &Path,
    weights: &Path,
    rgb: &Path,
    x_mod: &Path,
    out: &Path,
    save_logits: Option<&Path>,
) -> Result<bool> {
    let cfg = load_config(config)?;
    let map = load_bundle::<f32>(weights, &cfg)?;
    let mut src = MapSource { map };
    let w = build_weights::<f32, _>(&cfg, &mut src)?;
    if !src.map.is_empty() {
        return Err(SigmaError::config(format!(
            "weight bundle contains {} tensors the config does not use",
            src.map.len()
        )));
    }
    let i_rgb = read_ppm::<f32>(rgb)?;
    let i_x = read_ppm::<f32>(x_mod)?;
    let logits = forward_logits(&i_rgb, &i_x, &w, &cfg)?;
    if let Some(path) = save_logits {
        write_tensor(path, &AnyTensor::F32(logits.clone()))?;
    }
    let labels = logits_to_labels(&logits, &cfg)?;
    let palette = Palette::for_classes(cfg.num_classes);
    write_label_ppm(out, &labels.labels, labels.h, labels.w, &palette)?;
    println!(
        "forward: {}x{} -> {} classes, wrote {}",
        labels.h,
        labels.w,
        cfg.num_classes,
        out.display()
    );
    Ok(true)
}

fn cmd_shapes(config: &Path, hw: &[usize]) -> Result<bool> {
    let cfg = load_config(config)?;
    let (h, w) = (hw[0], hw[1]);
    let shapes = cfg.pyramid_shapes(h, w)?;
    println!("input {h}x{w}:");
    for (k, (sh, sw, sc)) in shapes.iter().enumerate() {
        println!("  stage {}: {}x{}x{}", k + 1, sh, sw, sc);
    }
    let params = count_params(&cfg)?;
    let flops = count_flops(&cfg, h, w)?;
    println!("params: {params} ({:.2} M)", params as f64 / 1e6);
    println!("forward flops: {:.2} G", flops.gflops());
    for (term, v) in &flops.terms {
        println!("  {term:20} {:8.2} G", v / 1e9);
    }
    println!("  scan subtotal        {:8.2} G", flops.scan_flops / 1e9);
    // reference comparison for the tiny backbone at its published geometry
    let tiny = SigmaConfig::tiny(cfg.num_classes);
    if cfg.stage_depths == tiny.stage_depths && cfg.stage_dims == tiny.stage_dims {
        let p_dev = (params as f64 / 1e6 / 48.3 - 1.0) * 100.0;
        println!("reference params 48.3 M -> deviation {p_dev:+.1}%");
        if (h, w) == (480, 640) {
            let f_dev = (flops.gflops() / 89.5 - 1.0) * 100.0;
            println!("reference flops 89.5 G -> deviation {f_dev:+.1}%");
            println!("deviation notes:");
            println!("  - decoder block width and classifier hidden width are unspecified upstream; this build runs decoder blocks at the stage width with expansion 1");
            println!("  - fusion cross-scan carries four per-direction parameter sets per modality");
        }
    }
    Ok(true)
}

fn cmd_bench(threads: usize, repeats: usize) -> Result<bool> {
    let run = || {
        let lengths = [1024usize, 2048, 4096, 8192];
        bench_scan(&lengths, 16, 4, repeats, 8192)
    };
    let report = if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SigmaError::config(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    };
    println!("len,seq_ms,chunked_ms,attention_ms");
    for row in &report.rows {
        println!(
            "{},{:.3},{:.3},{:.3}",
            row.len, row.seq_ms, row.chunked_ms, row.attention_ms
        );
    }
    // scans must stay near-linear; attention grows super-linearly
    let mut ok = true;
    for pair in report.rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.len >= 4096 {
            let ratio = b.chunked_ms / a.chunked_ms.max(1e-9);
            if ratio > 2.6 {
                println!("FAIL scan doubling {} -> {}: ratio {ratio:.2} > 2.6", a.len, b.len);
                ok = false;
            }
        }
        if a.len >= 1024 && a.attention_ms > 0.0 && b.attention_ms > 0.0 {
            let ratio = b.attention_ms / a.attention_ms;
            if ratio < 3.0 {
                println!(
                    "FAIL attention doubling {} -> {}: ratio {ratio:.2} < 3.0",
                    a.len, b.len
                );
                ok = false;
            }
        }
    }
    println!("bench: {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn cmd_init_weights(config: &Path, seed: u64, out: &Path) -> Result<bool> {
    let cfg = load_config(config)?;
    let (_, tensors) = init_weights::<f32>(&cfg, seed)?;
    save_bundle(out, &cfg, &tensors, Dtype::F32)?;
    let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    println!(
        "init-weights: seed {seed}, {} tensors, {total} parameters -> {}",
        tensors.len(),
        out.display()
    );
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::ScanCheck {
            seed,
            cases,
            max_len,
        } => cmd_scan_check(*seed, *cases, *max_len),
        Command::Gradcheck {
            op,
            seed,
            cases,
            step,
            tol,
            negative_control,
        } => cmd_gradcheck(op, *seed, *cases, *step, *tol, *negative_control),
        Command::Flops(args) => cmd_flops(args),
        Command::Forward {
            config,
            weights,
            rgb,
            x_mod,
            out,
            save_logits,
        } => cmd_forward(config, weights, rgb, x_mod, out, save_logits.as_deref()),
        Command::Shapes { config, hw } => cmd_shapes(config, hw),
        Command::Bench { threads, repeats } => cmd_bench(*threads, *repeats),
        Command::InitWeights { config, seed, out } => cmd_init_weights(config, *seed, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
